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

// Discrete-time control barrier filter over a learned transition model.
//
// The filter returns the control closest to the policy output (in a weighted
// norm) that satisfies
//
//   b(x + F(x, u)) + (alpha - 1) b(x) >= kappa * sigma(u),
//
// where sigma^2 = grad b^T Sigma grad b at the predicted state accounts for
// model uncertainty. The problem is solved by sequential linearization of the
// single constraint; each subproblem is a separable box-constrained QP that is
// solved exactly.

#pragma once

#include <string>

#include "stlseeker/common.hpp"
#include "stlseeker/nets.hpp"

namespace stlseeker::safety {

enum class BarrierKind {
  kOutsideDisk,  // |p - c|^2 - r^2
  kInsideDisk,   // r^2 - |p - c|^2
};

struct BarrierSpec {
  BarrierKind kind = BarrierKind::kOutsideDisk;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 1.0;
  double alpha = 1.0;
  /// Diagonal weights of the control-deviation norm.
  Vec weights;
  /// kappa: number of standard deviations kept as margin.
  double margin = 2.0;
  int px_index = 0;
  int py_index = 1;

  static BarrierSpec outside_disk(Eigen::Vector2d center, double radius, double alpha, Vec weights);
  static BarrierSpec inside_disk(Eigen::Vector2d center, double radius, double alpha, Vec weights);
  void validate() const;
};

double barrier_value(const BarrierSpec& b, const Vec& x);
Vec barrier_gradient(const BarrierSpec& b, const Vec& x);

/// sigma^2 = grad b(x_pred)^T Sigma grad b(x_pred).
double error_variance(const BarrierSpec& b, const Mat& sigma, const Vec& x_pred);

/// Left side minus right side of the filter constraint at control u.
double constraint_value(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma, const Vec& x,
                        const Vec& u);

enum class SafeStatus { kUnmodified, kAdjusted, kInfeasibleFallback };

std::string to_string(SafeStatus status);

struct SafeControlResult {
  Vec u;
  double slack = 0.0;  // constraint_value at u
  int iterations = 0;
  SafeStatus status = SafeStatus::kUnmodified;
};

struct SqpOptions {
  int max_iterations = 10;
  double step_tolerance = 1e-6;
};

/// Minimally invasive correction of `u_raw`. `model` must be the
/// deterministic form of the learned dynamics.
SafeControlResult safe_control(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma,
                               const Vec& x, const Vec& u_raw, const Box& control_box, const SqpOptions& opts = {});

/// argmin sum w_i (u_i - r_i)^2  s.t.  a.u >= beta, lo <= u <= hi.
/// When the half-space misses the box the box maximizer of a.u is returned
/// and `feasible` is cleared.
Vec project_halfspace_box(const Vec& r, const Vec& w, const Vec& a, double beta, const Box& box, bool* feasible);

}  // namespace stlseeker::safety
