// Copyright 2026 The stlseeker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Policy improvement on a learned model.
//
// A rollout records the policy on one tape, step by step, with every state
// entering as its own input node; the model is only linearized per step.
// Gradients are then assembled backwards in time with co-states
//
//   lambda_T = d rho / d x_T
//   lambda_t = d rho / d x_t + Fx_t^T lambda_{t+1} + (policy path from x_t)
//
// where the policy path collects d u_j / d x_t for every j >= t through the
// recurrent state. The parameter gradient is
//
//   dW = sum_t (Fu_t^T lambda_{t+1})^T d u_t / d W.
//
// A direct unroll that records policy, model and robustness on one tape
// serves as the reference implementation for tests.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "stlseeker/common.hpp"
#include "stlseeker/nets.hpp"
#include "stlseeker/stl.hpp"

namespace stlseeker::policy_opt {

struct RolloutTape {
  std::unique_ptr<diffgraph::Tape> tape;  // the policy unroll
  diffgraph::Var params;
  std::vector<diffgraph::Var> state_inputs;  // x_0..x_{T-1} as seen by the policy
  std::vector<diffgraph::Var> controls;      // u_0..u_{T-1}
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // tape nodes of step t
  std::vector<Vec> states;                   // x_0..x_T
  std::vector<Mat> fx;                       // I + dF/dx at step t
  std::vector<Mat> fu;                       // dF/du at step t

  int horizon() const { return static_cast<int>(controls.size()); }
};

/// x_{t+1} = x_t + F(x_t, pi(x_{0:t}; W)) for T steps.
RolloutTape rollout_model(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                          const Vec& x0, int horizon);

/// lambda[t] for t = 0..T; lambda[0] is the total derivative with respect to
/// the initial state and is not needed for the parameter gradient.
struct CostateSet {
  std::vector<Vec> lambda;
};

/// `drho_dx` has one row per state x_0..x_T.
CostateSet compute_costates(RolloutTape& rollout, const Mat& drho_dx);

/// Parameter gradient of one trajectory from its co-states.
Vec gradient_single(RolloutTape& rollout, const CostateSet& costates);

struct TrajectoryGradient {
  Vec grad;
  double smooth_rho = 0.0;
  double classic_rho = 0.0;
};

/// Rollout, smooth robustness, co-states and parameter gradient.
TrajectoryGradient trajectory_gradient(const nets::Policy& policy, const Vec& params,
                                       const nets::TransitionModel& model, const stl::Formula& formula,
                                       const Vec& x0, int horizon, double k);

struct BatchGradient {
  Vec grad;
  double avg_smooth_rho = 0.0;
  double avg_classic_rho = 0.0;
};

/// Average of the per-trajectory gradients; sample i uses x0s[i] and the
/// dropout net under masks[i].
BatchGradient gradient_batch(const nets::Policy& policy, const Vec& params, const nets::DenseNet& net,
                             const stl::Formula& formula, const std::vector<Vec>& x0s,
                             const std::vector<nets::DropoutMask>& masks, int horizon, double k);

/// d rho / d W by reverse mode through one tape holding the whole unroll.
Vec unrolled_gradient_oracle(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                             const stl::Formula& formula, const Vec& x0, int horizon, double k,
                             double* rho = nullptr);

/// Smooth robustness of the model rollout (plain values, for finite differences).
double rollout_robustness(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                          const stl::Formula& formula, const Vec& x0, int horizon, double k);

struct ImproveOptions {
  int samples = 4;           // M
  int window = 50;           // moving-average window for the stop test
  double tolerance = 1e-3;   // minimum improvement between windows
  int max_steps = 2000;
  int min_steps = 0;
  double lr = 1e-3;
  double k = stl::kDefaultTemperature;
  double divergence_margin = 1.0;
  int patience = 200;
};

struct TracePoint {
  int step = 0;
  double avg_smooth_rho = 0.0;
  double avg_classic_rho = 0.0;
  double grad_norm = 0.0;
};

struct ImproveResult {
  Vec params;
  std::vector<TracePoint> trace;
  bool converged = false;
  bool diverged = false;
};

/// Adam ascent on the sampled-model objective until the windowed average
/// robustness stops improving.
ImproveResult improve_policy(const nets::Policy& policy, Vec params, const nets::DenseNet& net,
                             const stl::Formula& formula, const Box& initial_box, int horizon,
                             const ImproveOptions& opts, Rng& rng);

/// A small random problem for cross-checking gradients: n in {2, 3},
/// T in 2..6, recurrent hidden width in 2..8, a dropout net model and a
/// reach / avoid / until formula.
struct OracleInstance {
  int n = 2;
  int horizon = 4;
  std::unique_ptr<nets::Policy> policy;
  Vec params;
  nets::DenseNet net;
  nets::DropoutMask mask;
  stl::Formula formula;
  Vec x0;
};

OracleInstance make_oracle_instance(std::uint64_t seed);

/// Norm-wise relative errors between the three gradient computations.
struct OracleComparison {
  double adjoint_vs_unroll = 0.0;
  double adjoint_vs_fd = 0.0;
};

OracleComparison compare_gradient_oracles(const OracleInstance& inst, double fd_step = 1e-6);

/// Central differences of a scalar function.
Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h);

/// |a - b| / max(|a|, |b|, floor) in the Euclidean norm.
double relative_error(const Vec& a, const Vec& b, double floor = 1e-8);

}  // namespace stlseeker::policy_opt
