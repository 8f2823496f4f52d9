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

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "stlseeker/safety.hpp"

namespace stlseeker::safety {
namespace {

const Box kIntegratorBox(Vec::Constant(2, -2.0), Vec::Constant(2, 2.0));

nets::LinearModel integrator_model() { return nets::LinearModel(Mat::Zero(2, 2), Mat::Identity(2, 2)); }

TEST(Barrier, ClosedFormValues) {
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(2, 2), 0.5, 0.7, Vec::Ones(2));
  EXPECT_DOUBLE_EQ(barrier_value(obs, Eigen::Vector3d(2, 2, 1.0)), -0.25);
  EXPECT_NEAR(barrier_value(obs, Eigen::Vector3d(2.5, 2, 0.0)), 0.0, 1e-15);
  const BarrierSpec safe = BarrierSpec::inside_disk(Eigen::Vector2d(0, 0), 8.0, 0.7, Vec::Ones(2));
  EXPECT_DOUBLE_EQ(barrier_value(safe, Eigen::Vector2d(0, 0)), 64.0);
  EXPECT_EQ(barrier_gradient(obs, Eigen::Vector3d(3, 2, 0.4)), Eigen::Vector3d(2, 0, 0));
  EXPECT_EQ(barrier_gradient(safe, Eigen::Vector2d(1, -1)), Eigen::Vector2d(-2, 2));
}

TEST(Barrier, ValidatesParameters) {
  EXPECT_THROW(BarrierSpec::outside_disk(Eigen::Vector2d::Zero(), 1.0, 1.5, Vec::Ones(2)).validate(),
               std::invalid_argument);
  EXPECT_THROW(BarrierSpec::outside_disk(Eigen::Vector2d::Zero(), 1.0, 0.5, Eigen::Vector2d(1, 0)).validate(),
               std::invalid_argument);
  EXPECT_THROW(BarrierSpec::outside_disk(Eigen::Vector2d::Zero(), -1.0, 0.5, Vec::Ones(2)).validate(),
               std::invalid_argument);
}

TEST(ErrorVariance, Examples) {
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(1, -1), 0.5, 0.7, Vec::Ones(2));
  const Vec x = Eigen::Vector3d(1.3, 0.2, 2.0);
  EXPECT_EQ(error_variance(obs, Mat::Zero(3, 3), x), 0.0);
  Mat sigma = Mat::Zero(3, 3);
  sigma(0, 0) = sigma(1, 1) = 0.04;
  sigma(2, 2) = 5.0;  // heading variance does not enter a position barrier
  EXPECT_NEAR(error_variance(obs, sigma, x), 4.0 * 0.04 * (0.09 + 1.44), 1e-14);
  EXPECT_EQ(error_variance(obs, sigma, Eigen::Vector3d(1, -1, 0)), 0.0);
}

TEST(SafeControl, InactiveConstraintReturnsRawControl) {
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(5, 5), 0.5, 0.7, Vec::Ones(2));
  const auto model = integrator_model();
  const Vec raw = Eigen::Vector2d(0.3, -0.1);
  const SafeControlResult r = safe_control(obs, model, Mat::Zero(2, 2), Vec::Zero(2), raw, kIntegratorBox);
  EXPECT_EQ(r.status, SafeStatus::kUnmodified);
  EXPECT_EQ(r.u, raw);
  EXPECT_GT(r.slack, 0.0);
}

TEST(SafeControl, HeadOnApproachIsDeflected) {
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(2, 0), 1.0, 1.0, Vec::Ones(2));
  const auto model = integrator_model();
  const Mat sigma = 0.01 * Mat::Identity(2, 2);
  const Vec x = Eigen::Vector2d(0.5, 0.0);
  const Vec raw = Eigen::Vector2d(1.5, 0.0);
  ASSERT_LT(constraint_value(obs, model, sigma, x, raw), 0.0);
  const SafeControlResult r = safe_control(obs, model, sigma, x, raw, kIntegratorBox);
  EXPECT_EQ(r.status, SafeStatus::kAdjusted);
  EXPECT_TRUE(kIntegratorBox.contains(r.u));
  EXPECT_GE(constraint_value(obs, model, sigma, x, r.u), -1e-6);
  EXPECT_NEAR(r.slack, constraint_value(obs, model, sigma, x, r.u), 1e-12);
  // Predicted barrier clears the 2-sigma margin.
  const Vec next = x + r.u;
  EXPECT_GE(barrier_value(obs, next), 2.0 * std::sqrt(error_variance(obs, sigma, next)) - 1e-6);
}

TEST(SafeControl, SolutionIsLocallyMinimal) {
  // Among feasible grid controls none is much closer to the raw output.
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(1.5, 0.5), 0.8, 0.7, Eigen::Vector2d(1.0, 0.2));
  const auto model = integrator_model();
  const Mat sigma = 0.005 * Mat::Identity(2, 2);
  const Vec x = Eigen::Vector2d(0.0, 0.0);
  const Vec raw = Eigen::Vector2d(1.6, 0.4);
  const SafeControlResult r = safe_control(obs, model, sigma, x, raw, kIntegratorBox);
  ASSERT_NE(r.status, SafeStatus::kInfeasibleFallback);
  auto cost = [&](const Vec& u) { return (obs.weights.array() * (u - raw).array().square()).sum(); };
  double best = std::numeric_limits<double>::infinity();
  for (double a = -2.0; a <= 2.0; a += 0.01) {
    for (double b = -2.0; b <= 2.0; b += 0.01) {
      const Vec u = Eigen::Vector2d(a, b);
      if (constraint_value(obs, model, sigma, x, u) >= 0.0) best = std::min(best, cost(u));
    }
  }
  EXPECT_LE(cost(r.u), best + 1e-3);
}

TEST(SafeControl, InfeasibleProblemFallsBackToBestConstraint) {
  // Deep inside the obstacle no control in a tiny box can satisfy the constraint.
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(0, 0), 2.0, 0.5, Vec::Ones(2));
  const auto model = integrator_model();
  const Box tiny(Vec::Constant(2, -0.1), Vec::Constant(2, 0.1));
  const Vec x = Eigen::Vector2d(0.3, 0.1);
  const SafeControlResult r = safe_control(obs, model, Mat::Zero(2, 2), x, Vec::Zero(2), tiny);
  EXPECT_EQ(r.status, SafeStatus::kInfeasibleFallback);
  EXPECT_TRUE(tiny.contains(r.u));
  double best = -std::numeric_limits<double>::infinity();
  for (double a = -0.1; a <= 0.1 + 1e-12; a += 0.005) {
    for (double b = -0.1; b <= 0.1 + 1e-12; b += 0.005) {
      best = std::max(best, constraint_value(obs, model, Mat::Zero(2, 2), x, Eigen::Vector2d(a, b)));
    }
  }
  EXPECT_GE(r.slack, best - 1e-6);
  EXPECT_LT(r.slack, 0.0);
}

TEST(SafeControl, LargerCovarianceIsMoreConservative) {
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(2, 1), 0.7, 0.7, Vec::Ones(2));
  const auto model = integrator_model();
  Mat sigma(2, 2);
  sigma << 0.02, 0.005, 0.005, 0.01;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec x = Box(Vec::Constant(2, -1.0), Vec::Constant(2, 4.0)).sample(rng);
    const Vec u = kIntegratorBox.sample(rng);
    const double base = constraint_value(obs, model, sigma, x, u);
    for (double c : {1.5, 4.0}) EXPECT_LE(constraint_value(obs, model, c * sigma, x, u), base + 1e-15);
  }
}

TEST(SafeControl, ExactModelKeepsTheSafeSetInvariant) {
  // True plant equals the model. b(x_{t+1}) >= (1 - alpha) b(x_t) on every step.
  const double alpha = 0.7;
  const BarrierSpec obs = BarrierSpec::outside_disk(Eigen::Vector2d(2, 2), 0.8, alpha, Vec::Ones(2));
  const auto model = integrator_model();
  Rng rng(4);
  for (int run = 0; run < 100; ++run) {
    Vec x = Box(Vec::Constant(2, 0.0), Vec::Constant(2, 4.0)).sample(rng);
    while (barrier_value(obs, x) < 0.0) x = Box(Vec::Constant(2, 0.0), Vec::Constant(2, 4.0)).sample(rng);
    const double b0 = barrier_value(obs, x);
    for (int t = 1; t <= 20; ++t) {
      const Vec toward = (Eigen::Vector2d(2, 2) - x) * 2.0;  // drive at the obstacle
      const Vec raw = kIntegratorBox.clamp(toward);
      const SafeControlResult r = safe_control(obs, model, Mat::Zero(2, 2), x, raw, kIntegratorBox);
      ASSERT_NE(r.status, SafeStatus::kInfeasibleFallback);
      x = x + r.u;
      const double bt = barrier_value(obs, x);
      ASSERT_GE(bt, -1e-9);
      EXPECT_GE(bt, std::pow(1.0 - alpha, t) * b0 - 1e-9);
    }
  }
}

TEST(Projection, MatchesBruteForce) {
  Rng rng(5);
  const Box box(Eigen::Vector2d(-1.0, -0.5), Eigen::Vector2d(1.0, 2.0));
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_real_distribution<double> weight(0.01, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec r = Eigen::Vector2d(coef(rng), coef(rng));
    const Vec w = Eigen::Vector2d(weight(rng), weight(rng));
    const Vec a = Eigen::Vector2d(coef(rng), coef(rng));
    const double beta = coef(rng);
    bool feasible = false;
    const Vec u = project_halfspace_box(r, w, a, beta, box, &feasible);
    EXPECT_TRUE(box.contains(u, 1e-12));
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (double p = -1.0; p <= 1.0 + 1e-12; p += 0.01) {
      for (double q = -0.5; q <= 2.0 + 1e-12; q += 0.01) {
        const Vec v = Eigen::Vector2d(p, q);
        if (a.dot(v) >= beta) {
          any = true;
          best = std::min(best, (w.array() * (v - r).array().square()).sum());
        }
      }
    }
    if (feasible) {
      EXPECT_GE(a.dot(u), beta - 1e-9);
      if (any) EXPECT_LE((w.array() * (u - r).array().square()).sum(), best + 1e-9);
    } else {
      EXPECT_FALSE(any && a.dot(u) < beta - 0.05);
      EXPECT_NEAR(a.dot(u), a.cwiseMax(0.0).dot(box.hi) + a.cwiseMin(0.0).dot(box.lo), 1e-12);
    }
  }
}

TEST(Status, Names) {
  EXPECT_EQ(to_string(SafeStatus::kUnmodified), "unmodified");
  EXPECT_EQ(to_string(SafeStatus::kAdjusted), "adjusted");
  EXPECT_EQ(to_string(SafeStatus::kInfeasibleFallback), "infeasible-fallback");
}

}  // namespace
}  // namespace stlseeker::safety
