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

#include <gtest/gtest.h>

#include "stlseeker/nets.hpp"
#include "support/fixtures.hpp"

namespace stlseeker::nets {
namespace {

Box unicycle_box() { return Box(Eigen::Vector2d(0.0, -M_PI / 2), Eigen::Vector2d(0.75, M_PI / 2)); }

TEST(DenseNet, ZeroWeightsGiveBiasOutput) {
  DenseNet net({5, 32, 32, 3}, 0.1);
  Rng rng(1);
  EXPECT_TRUE(fnn_apply(net, Eigen::Vector3d(1, 2, 3), Eigen::Vector2d(0.5, 0.1), net.sample_mask(rng)).isZero());
  Vec p = Vec::Zero(static_cast<Eigen::Index>(net.num_params()));
  p.tail(3) << 0.25, -1.0, 2.0;
  net.set_params(p);
  EXPECT_EQ(fnn_apply(net, Eigen::Vector3d(1, 2, 3), Eigen::Vector2d(0.5, 0.1), net.deterministic_mask()),
            Eigen::Vector3d(0.25, -1.0, 2.0));
}

TEST(DenseNet, ParameterCount) {
  DenseNet net({5, 32, 32, 3}, 0.1);
  EXPECT_EQ(net.num_params(), 32u * 6 + 32u * 33 + 3u * 33);
  EXPECT_EQ(net.num_hidden_layers(), 2u);
  EXPECT_THROW(DenseNet({5, 3}, 1.0), std::invalid_argument);
  EXPECT_THROW(net.set_params(Vec::Zero(3)), ShapeError);
}

TEST(DenseNet, DropoutExpectationMatchesDeterministicScaling) {
  // One hidden layer followed by a linear output: E[masked] = scaled exactly.
  DenseNet net({2, 16, 2}, 0.3);
  Rng rng(4);
  net.initialize(rng);
  const Vec in = Eigen::Vector2d(0.4, -0.7);
  Vec mean = Vec::Zero(2);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) mean += net.apply(in, net.sample_mask(rng));
  mean /= draws;
  const Vec det = net.apply(in, net.deterministic_mask());
  for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(mean[i] - det[i]), 0.01 * std::abs(det[i]) + 1e-3);
}

TEST(DenseNet, NoDropoutMakesMasksIrrelevant) {
  DenseNet net({3, 8, 8, 2}, 0.0);
  Rng rng(2);
  net.initialize(rng);
  const Vec in = Eigen::Vector3d(0.1, 0.2, 0.3);
  EXPECT_EQ(net.apply(in, net.sample_mask(rng)), net.apply(in, net.deterministic_mask()));
}

TEST(DenseNet, RecordMatchesApply) {
  DenseNet net({3, 8, 8, 2}, 0.2);
  Rng rng(3);
  net.initialize(rng);
  const DropoutMask mask = net.sample_mask(rng);
  const Vec in = Eigen::Vector3d(-0.3, 0.9, 0.4);
  Tape tape;
  Var out = net.record(tape.constant(net.params()), tape.constant(in), mask);
  EXPECT_LT((out.value() - net.apply(in, mask)).norm(), 1e-14);
}

TEST(DenseNet, PeriodicInputsEnterAsSineAndCosine) {
  DenseNet net({3, 4, 2}, 0.0, {2});
  EXPECT_EQ(net.encoded_dim(), 4);
  EXPECT_EQ(net.num_params(), 4u * 5 + 2u * 5);
  EXPECT_TRUE(net.encode(Eigen::Vector3d(1.0, 2.0, 0.5)).isApprox(Eigen::Vector4d(1.0, 2.0, std::sin(0.5), std::cos(0.5))));
  Rng rng(21);
  net.initialize(rng);
  const Vec a = net.apply(Eigen::Vector3d(0.3, -0.2, 0.4), net.deterministic_mask());
  const Vec b = net.apply(Eigen::Vector3d(0.3, -0.2, 0.4 + 2.0 * M_PI), net.deterministic_mask());
  EXPECT_LT((a - b).norm(), 1e-12);
  EXPECT_THROW(DenseNet({3, 4, 2}, 0.0, {3}), ShapeError);
  EXPECT_THROW(DenseNet({3, 4, 2}, 0.0, {1, 1}), ShapeError);
}

TEST(DenseNet, PeriodicRecordMatchesApplyAndFiniteDifferences) {
  DenseNet net({5, 8, 8, 3}, 0.2, {2});
  Rng rng(22);
  net.initialize(rng);
  const DropoutMask mask = net.sample_mask(rng);
  const Vec in = (Vec(5) << 0.2, -0.4, 2.9, 0.3, -0.2).finished();
  diffgraph::Tape tape;
  auto x = tape.leaf("x", in);
  auto out = net.record(tape.constant(net.params()), x, mask);
  EXPECT_LT((out.value() - net.apply(in, mask)).norm(), 1e-12);
  for (int i = 0; i < 3; ++i) {
    diffgraph::Tape t;
    auto xi = t.leaf("x", in);
    auto yi = t.slice(net.record(t.constant(net.params()), xi, mask), static_cast<std::size_t>(i), 1);
    const Vec fd = testing::central_difference([&](const Vec& z) { return net.apply(z, mask)[i]; }, in, 1e-6);
    EXPECT_LT(testing::relative_error(t.backward(yi).at("x"), fd), 1e-6);
  }
}

TEST(DenseNet, MaskShapeIsChecked) {
  DenseNet net({3, 8, 8, 2}, 0.2);
  DropoutMask bad;
  bad.layers = {Vec::Ones(8)};
  EXPECT_THROW(net.apply(Eigen::Vector3d::Zero(), bad), ShapeError);
  EXPECT_THROW(net.apply(Eigen::Vector2d::Zero(), net.deterministic_mask()), ShapeError);
}

TEST(Mask, NoDropoutIsAllOnes) {
  Rng rng(5);
  const std::vector<int> widths{32, 32};
  const DropoutMask m = sample_mask(0.0, widths, rng);
  for (const Vec& z : m.layers) EXPECT_TRUE(z.isOnes());
}

TEST(Mask, ActiveFractionConcentrates) {
  Rng rng(6);
  const std::vector<int> widths{10000};
  const DropoutMask m = sample_mask(0.1, widths, rng);
  EXPECT_NEAR(m.layers[0].mean(), 0.9, 0.01);
  for (Eigen::Index i = 0; i < 10000; ++i) EXPECT_TRUE(m.layers[0][i] == 0.0 || m.layers[0][i] == 1.0);
}

TEST(Mask, SameSeedSameMask) {
  const std::vector<int> widths{32, 32};
  Rng a(77), b(77);
  const DropoutMask x = sample_mask(0.1, widths, a);
  const DropoutMask y = sample_mask(0.1, widths, b);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(x.layers[l], y.layers[l]);
}

class PolicyKinds : public ::testing::TestWithParam<PolicyKind> {};

TEST_P(PolicyKinds, OutputStaysInsideTheBox) {
  auto policy = make_policy(GetParam(), 3, unicycle_box(), {32, 32});
  Rng rng(8);
  std::normal_distribution<double> wide(0.0, 20.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec w = policy->initial_params(rng) * (1.0 + trial);
    std::vector<Vec> hidden;
    for (int s : policy->hidden_sizes()) hidden.push_back(Vec::Zero(s));
    for (int i = 0; i < 500; ++i) {
      const Vec x = Eigen::Vector3d(wide(rng), wide(rng), wide(rng));
      auto [u, next] = policy_step(*policy, w, x, hidden);
      EXPECT_TRUE(policy->control_box().contains(u)) << u.transpose();
      hidden = std::move(next);
    }
  }
}

TEST_P(PolicyKinds, DeterministicFromZeroHidden) {
  auto policy = make_policy(GetParam(), 3, unicycle_box(), {8, 8});
  Rng rng(9);
  const Vec w = policy->initial_params(rng);
  std::vector<Vec> hidden;
  for (int s : policy->hidden_sizes()) hidden.push_back(Vec::Zero(s));
  const Vec x = Eigen::Vector3d(1.0, 0.5, -0.2);
  EXPECT_EQ(policy_step(*policy, w, x, hidden).first, policy_step(*policy, w, x, hidden).first);
  PolicyRunner runner(*policy, w);
  const Vec first = runner.step(x);
  EXPECT_EQ(first, policy_step(*policy, w, x, hidden).first);
  runner.step(x);
  runner.reset();
  EXPECT_EQ(runner.step(x), first);
}

TEST_P(PolicyKinds, ControlGradientMatchesFiniteDifferences) {
  auto policy = make_policy(GetParam(), 3, unicycle_box(), {8, 8});
  Rng rng(10);
  const Vec w = policy->initial_params(rng);
  const Vec x = Eigen::Vector3d(0.3, -0.6, 1.1);
  for (int out = 0; out < 2; ++out) {
    Tape tape;
    Var xv = tape.leaf("x", x);
    PolicyStep s = policy->record_step(tape.constant(w), xv, policy->zero_hidden(tape));
    const Vec analytic = tape.backward(tape.slice(s.control, static_cast<std::size_t>(out), 1)).at("x");
    std::vector<Vec> zero;
    for (int h : policy->hidden_sizes()) zero.push_back(Vec::Zero(h));
    const Vec fd = testing::central_difference(
        [&](const Vec& z) { return policy_step(*policy, w, z, zero).first[out]; }, x, 1e-6);
    EXPECT_LT(testing::relative_error(analytic, fd), 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(Both, PolicyKinds, ::testing::Values(PolicyKind::kRecurrent, PolicyKind::kFeedforward));

TEST(RecurrentPolicy, ThroughTimeGradientsMatchFiniteDifferences) {
  // d u_j / d x_t and d u_j / d W on a five-step unroll.
  RecurrentPolicy policy(2, Box(Eigen::Vector2d(-1, -2), Eigen::Vector2d(1, 0.5)), {6, 5});
  Rng rng(12);
  const Vec w = policy.initial_params(rng);
  std::vector<Vec> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(Box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)).sample(rng));
  auto unroll = [&](const Vec& params, const std::vector<Vec>& inputs) {
    std::vector<Vec> hidden;
    for (int s : policy.hidden_sizes()) hidden.push_back(Vec::Zero(s));
    std::vector<Vec> us;
    for (const Vec& x : inputs) {
      auto [u, next] = policy_step(policy, params, x, hidden);
      us.push_back(u);
      hidden = std::move(next);
    }
    return us;
  };
  for (int j = 1; j < 5; ++j) {
    Tape tape;
    Var wv = tape.leaf("W", w);
    std::vector<Var> hidden = policy.zero_hidden(tape);
    Var uj;
    for (int t = 0; t <= j; ++t) {
      PolicyStep s = policy.record_step(wv, tape.leaf("x" + std::to_string(t), xs[static_cast<std::size_t>(t)]), hidden);
      hidden = s.hidden;
      uj = s.control;
    }
    const auto grads = tape.backward(tape.sum(uj));
    const Vec fd_w = testing::central_difference([&](const Vec& p) { return unroll(p, xs)[static_cast<std::size_t>(j)].sum(); }, w, 1e-6);
    EXPECT_LT(testing::relative_error(grads.at("W"), fd_w), 1e-4) << "j=" << j;
    for (int t = 0; t <= j; ++t) {
      const Vec fd_x = testing::central_difference(
          [&](const Vec& z) {
            auto ys = xs;
            ys[static_cast<std::size_t>(t)] = z;
            return unroll(w, ys)[static_cast<std::size_t>(j)].sum();
          },
          xs[static_cast<std::size_t>(t)], 1e-6);
      EXPECT_LT(testing::relative_error(grads.at("x" + std::to_string(t)), fd_x), 1e-4) << "j=" << j << " t=" << t;
    }
  }
}

TEST(RecurrentPolicy, ForgetBiasStartsAtOne) {
  RecurrentPolicy policy(3, unicycle_box(), {4, 4});
  Rng rng(1);
  const Vec w = policy.initial_params(rng);
  for (const auto& layer : policy.layers()) {
    const auto bias = static_cast<Eigen::Index>(layer.weight_offset + layer.rows * layer.cols);
    EXPECT_TRUE(w.segment(bias + 4, 4).isOnes());
  }
  EXPECT_EQ(policy.hidden_sizes(), (std::vector<int>{4, 4, 4, 4}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Vec p = Eigen::Vector3d(1, 2, 3);
  AdamState s;
  adam_step(p, Vec::Zero(3), s);
  EXPECT_EQ(p, Eigen::Vector3d(1, 2, 3));
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Vec p = Eigen::Vector3d(0, 0, 0);
  AdamState s;
  adam_step(p, Eigen::Vector3d(0.5, -3.0, 1e-3), s);
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-9);
  EXPECT_NEAR(p[2], -1e-3, 1e-8);
  Vec q = Vec::Zero(1);
  AdamState t;
  adam_step(q, Vec::Constant(1, 2.0), t, /*maximize=*/true);
  EXPECT_NEAR(q[0], 1e-3, 1e-9);
}

TEST(Adam, AscendsConcaveQuadratic) {
  // f(w) = -(w - 0.3)^2, lr chosen so 500 steps reach the optimum.
  Vec w = Vec::Constant(1, -0.2);
  AdamState s;
  s.lr = 1e-2;
  for (int i = 0; i < 500; ++i) adam_step(w, Vec::Constant(1, -2.0 * (w[0] - 0.3)), s, true);
  EXPECT_NEAR(w[0], 0.3, 1e-2);
}

TEST(Adam, ShapeMismatch) {
  Vec p = Vec::Zero(2);
  AdamState s;
  EXPECT_THROW(adam_step(p, Vec::Zero(3), s), ShapeError);
}

TEST(Models, LinearizationOfLinearModel) {
  Mat a(2, 2), b(2, 2);
  a << 0.1, 0.2, -0.3, 0.0;
  b << 1.0, 0.0, 0.5, 2.0;
  LinearModel model(a, b);
  const Linearization lin = linearize(model, Eigen::Vector2d(1, 2), Eigen::Vector2d(-1, 0.5));
  EXPECT_TRUE(lin.dx.isApprox(a));
  EXPECT_TRUE(lin.du.isApprox(b));
  EXPECT_TRUE(lin.delta.isApprox(a * Eigen::Vector2d(1, 2) + b * Eigen::Vector2d(-1, 0.5)));
}

TEST(Models, NetModelJacobiansMatchFiniteDifferences) {
  DenseNet net({5, 8, 8, 3}, 0.1);
  Rng rng(13);
  net.initialize(rng);
  NetModel model(net, 3, net.sample_mask(rng));
  const Vec x = Eigen::Vector3d(0.2, -0.4, 0.9);
  const Vec u = Eigen::Vector2d(0.3, -0.2);
  const Linearization lin = linearize(model, x, u);
  for (int i = 0; i < 3; ++i) {
    const Vec fdx = testing::central_difference([&](const Vec& z) { return predict_delta(model, z, u)[i]; }, x, 1e-6);
    const Vec fdu = testing::central_difference([&](const Vec& z) { return predict_delta(model, x, z)[i]; }, u, 1e-6);
    EXPECT_LT(testing::relative_error(lin.dx.row(i).transpose(), fdx), 1e-6);
    EXPECT_LT(testing::relative_error(lin.du.row(i).transpose(), fdu), 1e-6);
  }
}

TEST(Serialization, BitExactRoundTrip) {
  DenseNet net({5, 32, 32, 3}, 0.1);
  Rng rng(14);
  net.initialize(rng);
  const DenseNet back = dense_net_from_json(nlohmann::json::parse(to_json(net).dump()));
  EXPECT_EQ(back.widths(), net.widths());
  EXPECT_EQ(back.dropout(), net.dropout());
  EXPECT_EQ(back.params(), net.params());
  EXPECT_TRUE(back.periodic_inputs().empty());
  const DenseNet periodic({5, 4, 3}, 0.1, {2});
  EXPECT_EQ(dense_net_from_json(to_json(periodic)).periodic_inputs(), std::vector<int>{2});

  RecurrentPolicy policy(3, unicycle_box(), {32, 32});
  const Vec w = policy.initial_params(rng);
  auto [p2, w2] = policy_from_json(nlohmann::json::parse(policy_to_json(policy, w).dump()));
  EXPECT_EQ(p2->kind(), PolicyKind::kRecurrent);
  EXPECT_EQ(w2, w);
  EXPECT_EQ(p2->control_box().hi, policy.control_box().hi);
  EXPECT_THROW(policy_from_json({{"kind", "gru"}}), std::invalid_argument);
}

}  // namespace
}  // namespace stlseeker::nets
