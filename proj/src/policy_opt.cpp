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

#include "stlseeker/policy_opt.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stlseeker::policy_opt {

using diffgraph::Tape;
using diffgraph::Var;

RolloutTape rollout_model(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                          const Vec& x0, int horizon) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be positive");
  if (x0.size() != policy.state_dim() || model.state_dim() != policy.state_dim()) {
    throw nets::ShapeError("initial state, policy and model disagree on the state dimension");
  }
  RolloutTape r;
  r.tape = std::make_unique<Tape>();
  Tape& tape = *r.tape;
  r.params = tape.leaf("W", params);
  std::vector<Var> hidden = policy.zero_hidden(tape);
  const Mat eye = Mat::Identity(x0.size(), x0.size());
  Vec x = x0;
  r.states.push_back(x);
  for (int t = 0; t < horizon; ++t) {
    const std::size_t begin = tape.size();
    Var xv = tape.input(x);
    nets::PolicyStep step = policy.record_step(r.params, xv, hidden);
    r.segments.emplace_back(begin, tape.size());
    r.state_inputs.push_back(xv);
    r.controls.push_back(step.control);
    hidden = std::move(step.hidden);

    const nets::Linearization lin = nets::linearize(model, x, step.control.value());
    r.fx.push_back(eye + lin.dx);
    r.fu.push_back(lin.du);
    x = x + lin.delta;
    r.states.push_back(x);
  }
  return r;
}

CostateSet compute_costates(RolloutTape& r, const Mat& drho_dx) {
  const int T = r.horizon();
  if (drho_dx.rows() != T + 1) throw std::invalid_argument("robustness gradient rows do not match the rollout");
  Tape& tape = *r.tape;
  tape.zero_adjoints();
  CostateSet c;
  c.lambda.resize(static_cast<std::size_t>(T) + 1);
  c.lambda[static_cast<std::size_t>(T)] = drho_dx.row(T).transpose();
  for (int t = T - 1; t >= 0; --t) {
    const auto i = static_cast<std::size_t>(t);
    const Vec& next = c.lambda[i + 1];
    // Pull the control adjoint through step t of the policy; this also
    // deposits the adjoints of earlier hidden states for later iterations.
    tape.seed(r.controls[i], r.fu[i].transpose() * next);
    tape.propagate(r.segments[i].first, r.segments[i].second);
    c.lambda[i] = drho_dx.row(t).transpose() + r.fx[i].transpose() * next + tape.adjoint(r.state_inputs[i]);
  }
  return c;
}

Vec gradient_single(RolloutTape& r, const CostateSet& costates) {
  const int T = r.horizon();
  if (static_cast<int>(costates.lambda.size()) != T + 1) throw std::invalid_argument("co-state count mismatch");
  Tape& tape = *r.tape;
  tape.zero_adjoints();
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    tape.seed(r.controls[i], r.fu[i].transpose() * costates.lambda[i + 1]);
  }
  // Only the segments carry nodes that depend on W.
  tape.propagate(r.segments.front().first, r.segments.back().second);
  return tape.adjoint(r.params);
}

TrajectoryGradient trajectory_gradient(const nets::Policy& policy, const Vec& params,
                                       const nets::TransitionModel& model, const stl::Formula& formula,
                                       const Vec& x0, int horizon, double k) {
  RolloutTape r = rollout_model(policy, params, model, x0, horizon);
  const stl::RobustnessResult rho = stl::robustness_gradient(formula, r.states, k);
  const CostateSet c = compute_costates(r, rho.gradient);
  TrajectoryGradient out;
  out.grad = gradient_single(r, c);
  out.smooth_rho = rho.value;
  out.classic_rho = stl::robustness_classic(formula, r.states);
  return out;
}

BatchGradient gradient_batch(const nets::Policy& policy, const Vec& params, const nets::DenseNet& net,
                             const stl::Formula& formula, const std::vector<Vec>& x0s,
                             const std::vector<nets::DropoutMask>& masks, int horizon, double k) {
  if (x0s.empty() || x0s.size() != masks.size()) throw std::invalid_argument("need one mask per initial state");
  const int count = static_cast<int>(x0s.size());
  std::vector<TrajectoryGradient> parts(x0s.size());
  parallel_for(count, default_threads(), [&](int i) {
    const auto s = static_cast<std::size_t>(i);
    const nets::NetModel model(net, policy.state_dim(), masks[s]);
    parts[s] = trajectory_gradient(policy, params, model, formula, x0s[s], horizon, k);
  });
  BatchGradient out;
  out.grad = Vec::Zero(params.size());
  for (const TrajectoryGradient& p : parts) {
    out.grad += p.grad;
    out.avg_smooth_rho += p.smooth_rho;
    out.avg_classic_rho += p.classic_rho;
  }
  out.grad /= count;
  out.avg_smooth_rho /= count;
  out.avg_classic_rho /= count;
  return out;
}

namespace {

Var record_unroll(Tape& tape, Var w, const nets::Policy& policy, const nets::TransitionModel& model,
                  const stl::Formula& formula, const Vec& x0, int horizon, double k) {
  std::vector<Var> hidden = policy.zero_hidden(tape);
  Var x = tape.constant(x0);
  std::vector<Var> states{x};
  for (int t = 0; t < horizon; ++t) {
    nets::PolicyStep step = policy.record_step(w, x, hidden);
    hidden = std::move(step.hidden);
    x = tape.add(x, model.record_delta(x, step.control));
    states.push_back(x);
  }
  return stl::robustness_smooth(formula, states, k);
}

}  // namespace

Vec unrolled_gradient_oracle(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                             const stl::Formula& formula, const Vec& x0, int horizon, double k, double* rho) {
  Tape tape;
  Var w = tape.leaf("W", params);
  Var out = record_unroll(tape, w, policy, model, formula, x0, horizon, k);
  if (rho != nullptr) *rho = out.scalar();
  diffgraph::LeafValues grads = tape.backward(out);
  return grads.at("W");
}

double rollout_robustness(const nets::Policy& policy, const Vec& params, const nets::TransitionModel& model,
                          const stl::Formula& formula, const Vec& x0, int horizon, double k) {
  Tape tape;
  Var w = tape.constant(params);
  return record_unroll(tape, w, policy, model, formula, x0, horizon, k).scalar();
}

ImproveResult improve_policy(const nets::Policy& policy, Vec params, const nets::DenseNet& net,
                             const stl::Formula& formula, const Box& initial_box, int horizon,
                             const ImproveOptions& opts, Rng& rng) {
  if (opts.samples < 1 || opts.window < 1 || opts.max_steps < 1) throw std::invalid_argument("invalid improve options");
  nets::AdamState adam;
  adam.lr = opts.lr;
  ImproveResult res;
  Vec best_params = params;
  double best_average = -std::numeric_limits<double>::infinity();
  int below = 0;
  std::deque<double> recent;  // the last two windows of average smooth robustness
  double window_sum = 0.0;

  for (int step = 0; step < opts.max_steps; ++step) {
    std::vector<Vec> x0s;
    std::vector<nets::DropoutMask> masks;
    for (int i = 0; i < opts.samples; ++i) {
      x0s.push_back(initial_box.sample(rng));
      masks.push_back(net.sample_mask(rng));
    }
    const BatchGradient g = gradient_batch(policy, params, net, formula, x0s, masks, horizon, opts.k);
    res.trace.push_back({step, g.avg_smooth_rho, g.avg_classic_rho, g.grad.norm()});

    recent.push_back(g.avg_smooth_rho);
    window_sum += g.avg_smooth_rho;
    if (static_cast<int>(recent.size()) > opts.window) {
      window_sum -= recent[recent.size() - 1 - static_cast<std::size_t>(opts.window)];
    }
    if (static_cast<int>(recent.size()) > 2 * opts.window) recent.pop_front();

    // Divergence guard on the moving average, tracked against its best.
    if (static_cast<int>(recent.size()) >= opts.window) {
      const double average = window_sum / opts.window;
      if (average > best_average) {
        best_average = average;
        best_params = params;
      }
      below = average < best_average - opts.divergence_margin ? below + 1 : 0;
      if (below >= opts.patience) {
        res.diverged = true;
        res.params = best_params;
        return res;
      }
    }

    nets::adam_step(params, g.grad, adam, /*maximize=*/true);

    const int done = step + 1;
    if (done % opts.window == 0 && done >= 2 * opts.window && done >= opts.min_steps) {
      const double current = window_sum / opts.window;
      const double previous =
          std::accumulate(recent.begin(), recent.begin() + opts.window, 0.0) / opts.window;
      if (current - previous < opts.tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  res.params = std::move(params);
  return res;
}

Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(const Vec& a, const Vec& b, double floor) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

OracleInstance make_oracle_instance(std::uint64_t seed) {
  Rng rng = derive_rng(seed, 0);
  std::uniform_int_distribution<int> pick_n(2, 3);
  std::uniform_int_distribution<int> pick_t(2, 6);
  std::uniform_int_distribution<int> pick_h(2, 8);
  OracleInstance g;
  g.n = pick_n(rng);
  g.horizon = pick_t(rng);
  const int hidden = pick_h(rng);
  const int m = 2;
  Box box(Vec::Constant(m, -1.0), Vec::Constant(m, 1.5));
  g.policy = std::make_unique<nets::RecurrentPolicy>(g.n, box, std::vector<int>{hidden, hidden});
  g.params = g.policy->initial_params(rng);
  g.net = nets::DenseNet({g.n + m, 8, 8, g.n}, 0.2);
  g.net.initialize(rng);
  g.mask = g.net.sample_mask(rng);
  g.x0 = Box(Vec::Constant(g.n, -1.0), Vec::Constant(g.n, 1.0)).sample(rng);

  // Reach a disk, avoid a box, and stay above a half-plane.
  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  const Eigen::Vector2d goal(coord(rng), coord(rng));
  const Eigen::Vector2d lo(coord(rng) - 0.3, coord(rng) - 0.3);
  Vec normal = Vec::Zero(g.n);
  normal[0] = 1.0;
  const auto reach = stl::Formula::predicate("Goal", stl::Predicate::inside_disk(goal, 0.5));
  const auto avoid = stl::Formula::predicate("Box", stl::Predicate::inside_box(lo, lo + Eigen::Vector2d(0.6, 0.6)));
  const auto half = stl::Formula::predicate("Half", stl::Predicate::affine(normal, -3.0));
  const int T = g.horizon;
  g.formula = stl::Formula::conjunction({stl::Formula::eventually({1, T}, reach),
                                         stl::Formula::always({0, T - 1}, stl::Formula::negation(avoid)),
                                         stl::Formula::until(half, {1, T}, reach)});
  return g;
}

OracleComparison compare_gradient_oracles(const OracleInstance& g, double fd_step) {
  const nets::NetModel model(g.net, g.n, g.mask);
  const double k = stl::kDefaultTemperature;
  const Vec adjoint = trajectory_gradient(*g.policy, g.params, model, g.formula, g.x0, g.horizon, k).grad;
  const Vec unroll = unrolled_gradient_oracle(*g.policy, g.params, model, g.formula, g.x0, g.horizon, k);
  const Vec fd = central_difference(
      [&](const Vec& w) { return rollout_robustness(*g.policy, w, model, g.formula, g.x0, g.horizon, k); }, g.params,
      fd_step);
  return {relative_error(adjoint, unroll), relative_error(adjoint, fd)};
}

}  // namespace stlseeker::policy_opt
