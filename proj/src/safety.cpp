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

#include "stlseeker/safety.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stlseeker::safety {
namespace {

// Aim slightly inside the feasible set so round-off cannot leave the final
// iterate a hair short of the constraint.
constexpr double kTargetMargin = 1e-10;
constexpr double kSigmaFloor = 1e-12;
constexpr int kFallbackGrid = 41;

double sign(const BarrierSpec& b) { return b.kind == BarrierKind::kOutsideDisk ? 1.0 : -1.0; }

struct ConstraintEval {
  double value = 0.0;
  Vec grad;  // d value / d u
};

ConstraintEval evaluate(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma, const Vec& x,
                        const Vec& u, double b_now, bool with_gradient) {
  ConstraintEval out;
  nets::Linearization lin;
  if (with_gradient) {
    lin = nets::linearize(model, x, u);
  } else {
    lin.delta = nets::predict_delta(model, x, u);
  }
  const Vec x_pred = x + lin.delta;
  const Vec g = barrier_gradient(b, x_pred);
  const double var = g.dot(sigma * g);
  const double s = std::sqrt(std::max(var, 0.0));
  out.value = barrier_value(b, x_pred) + (b.alpha - 1.0) * b_now - b.margin * s;
  if (!with_gradient) return out;
  out.grad = lin.du.transpose() * g;
  if (s > kSigmaFloor) {
    // d sigma / d u = (Sigma g)^T H F_u / sigma with H = +-2 on the position block.
    Vec hs = Vec::Zero(x.size());
    const Vec sg = sigma * g;
    hs[b.px_index] = 2.0 * sign(b) * sg[b.px_index];
    hs[b.py_index] = 2.0 * sign(b) * sg[b.py_index];
    out.grad -= b.margin * (lin.du.transpose() * hs) / s;
  }
  return out;
}

// Best-effort maximizer of the constraint over the box: grid search followed
// by a shrinking pattern search around the best cell.
Vec maximize_constraint(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma, const Vec& x,
                        const Box& box, double b_now) {
  const Eigen::Index m = box.dim();
  auto value = [&](const Vec& u) { return evaluate(b, model, sigma, x, u, b_now, false).value; };
  Vec best = box.center();
  double best_value = value(best);
  Eigen::VectorXi idx = Eigen::VectorXi::Zero(m);
  const Vec span = box.hi - box.lo;
  while (true) {
    Vec u(m);
    for (Eigen::Index i = 0; i < m; ++i) u[i] = box.lo[i] + span[i] * idx[i] / (kFallbackGrid - 1);
    const double v = value(u);
    if (v > best_value) {
      best_value = v;
      best = u;
    }
    Eigen::Index i = 0;
    while (i < m && ++idx[i] == kFallbackGrid) idx[i++] = 0;
    if (i == m) break;
  }
  Vec step = span / (kFallbackGrid - 1);
  for (int round = 0; round < 30; ++round) {
    bool improved = false;
    for (Eigen::Index i = 0; i < m; ++i) {
      for (double dir : {-1.0, 1.0}) {
        Vec u = best;
        u[i] += dir * step[i];
        u = box.clamp(u);
        const double v = value(u);
        if (v > best_value) {
          best_value = v;
          best = u;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

}  // namespace

BarrierSpec BarrierSpec::outside_disk(Eigen::Vector2d center, double radius, double alpha, Vec weights) {
  BarrierSpec b;
  b.kind = BarrierKind::kOutsideDisk;
  b.center = center;
  b.radius = radius;
  b.alpha = alpha;
  b.weights = std::move(weights);
  b.validate();
  return b;
}

BarrierSpec BarrierSpec::inside_disk(Eigen::Vector2d center, double radius, double alpha, Vec weights) {
  BarrierSpec b = outside_disk(center, radius, alpha, std::move(weights));
  b.kind = BarrierKind::kInsideDisk;
  return b;
}

void BarrierSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("barrier decay alpha must lie in [0, 1]");
  if (!(radius > 0.0)) throw std::invalid_argument("barrier radius must be positive");
  if (weights.size() == 0 || (weights.array() <= 0.0).any()) {
    throw std::invalid_argument("control-deviation weights must be positive");
  }
  if (margin < 0.0) throw std::invalid_argument("margin multiplier must be non-negative");
}

std::string to_string(SafeStatus status) {
  switch (status) {
    case SafeStatus::kUnmodified:
      return "unmodified";
    case SafeStatus::kAdjusted:
      return "adjusted";
    case SafeStatus::kInfeasibleFallback:
      return "infeasible-fallback";
  }
  return "unknown";
}

double barrier_value(const BarrierSpec& b, const Vec& x) {
  const double dx = x[b.px_index] - b.center.x();
  const double dy = x[b.py_index] - b.center.y();
  return sign(b) * (dx * dx + dy * dy - b.radius * b.radius);
}

Vec barrier_gradient(const BarrierSpec& b, const Vec& x) {
  Vec g = Vec::Zero(x.size());
  g[b.px_index] = 2.0 * sign(b) * (x[b.px_index] - b.center.x());
  g[b.py_index] = 2.0 * sign(b) * (x[b.py_index] - b.center.y());
  return g;
}

double error_variance(const BarrierSpec& b, const Mat& sigma, const Vec& x_pred) {
  const Vec g = barrier_gradient(b, x_pred);
  return g.dot(sigma * g);
}

double constraint_value(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma, const Vec& x,
                        const Vec& u) {
  return evaluate(b, model, sigma, x, u, barrier_value(b, x), false).value;
}

Vec project_halfspace_box(const Vec& r, const Vec& w, const Vec& a, double beta, const Box& box, bool* feasible) {
  const Eigen::Index m = r.size();
  // u(mu) = clamp(r + mu a / (2 w)); a.u(mu) is piecewise linear and
  // non-decreasing in mu >= 0.
  auto at = [&](double mu) {
    Vec u = r + mu * a.cwiseQuotient(2.0 * w);
    return box.clamp(u);
  };
  Vec u = at(0.0);
  if (feasible != nullptr) *feasible = true;
  if (a.dot(u) >= beta) return u;

  std::vector<double> breaks{0.0};
  for (Eigen::Index i = 0; i < m; ++i) {
    if (a[i] == 0.0) continue;
    const double rate = a[i] / (2.0 * w[i]);
    for (double bound : {box.lo[i], box.hi[i]}) {
      const double mu = (bound - r[i]) / rate;
      if (mu > 0.0) breaks.push_back(mu);
    }
  }
  std::sort(breaks.begin(), breaks.end());
  double prev_mu = 0.0;
  double prev_val = a.dot(u);
  for (std::size_t k = 1; k < breaks.size(); ++k) {
    const double mu = breaks[k];
    const double val = a.dot(at(mu));
    if (val >= beta) {
      const double frac = val > prev_val ? (beta - prev_val) / (val - prev_val) : 1.0;
      return at(prev_mu + frac * (mu - prev_mu));
    }
    prev_mu = mu;
    prev_val = val;
  }
  // Every coordinate is saturated at the maximizer of a.u.
  if (feasible != nullptr) *feasible = false;
  Vec best(m);
  for (Eigen::Index i = 0; i < m; ++i) best[i] = a[i] > 0.0 ? box.hi[i] : (a[i] < 0.0 ? box.lo[i] : box.clamp(r)[i]);
  return best;
}

SafeControlResult safe_control(const BarrierSpec& b, const nets::TransitionModel& model, const Mat& sigma,
                               const Vec& x, const Vec& u_raw, const Box& control_box, const SqpOptions& opts) {
  if (b.weights.size() != u_raw.size()) throw std::invalid_argument("weight vector does not match the control");
  const double b_now = barrier_value(b, x);
  const Vec r = control_box.clamp(u_raw);
  auto cost = [&](const Vec& u) { return (b.weights.array() * (u - r).array().square()).sum(); };

  SafeControlResult res;
  ConstraintEval c = evaluate(b, model, sigma, x, r, b_now, true);
  if (c.value >= 0.0) {
    res.u = r;
    res.slack = c.value;
    return res;
  }

  // SQP from a linearization point; keeps the cheapest feasible iterate.
  bool found = false;
  double best_cost = 0.0;
  auto run = [&](Vec u, ConstraintEval cu) {
    for (int it = 0; it < opts.max_iterations; ++it) {
      ++res.iterations;
      const double beta = kTargetMargin - cu.value + cu.grad.dot(u);
      Vec next = project_halfspace_box(r, b.weights, cu.grad, beta, control_box, nullptr);
      const double step = (next - u).norm();
      u = std::move(next);
      cu = evaluate(b, model, sigma, x, u, b_now, true);
      if (cu.value >= 0.0 && (!found || cost(u) < best_cost)) {
        found = true;
        best_cost = cost(u);
        res.u = u;
        res.slack = cu.value;
      }
      if (step < opts.step_tolerance) break;
    }
  };
  run(r, c);
  if (found) {
    res.status = SafeStatus::kAdjusted;
    return res;
  }

  // The linearization at the raw control can be degenerate (zero barrier
  // gradient) or misleading. Restart from the constraint boundary on the
  // segment towards the best reachable control.
  const Vec top = maximize_constraint(b, model, sigma, x, control_box, b_now);
  const double top_value = constraint_value(b, model, sigma, x, top);
  if (top_value >= 0.0) {
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 50; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (constraint_value(b, model, sigma, x, r + mid * (top - r)) >= 0.0) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    const Vec edge = r + hi * (top - r);
    const ConstraintEval ce = evaluate(b, model, sigma, x, edge, b_now, true);
    found = true;
    best_cost = cost(edge);
    res.u = edge;
    res.slack = ce.value;
    run(edge, ce);
    res.status = SafeStatus::kAdjusted;
    return res;
  }

  res.u = top;
  res.slack = top_value;
  res.status = SafeStatus::kInfeasibleFallback;
  return res;
}

}  // namespace stlseeker::safety
