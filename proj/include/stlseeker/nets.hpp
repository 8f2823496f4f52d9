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

// Neural building blocks: the dropout dynamics network, recurrent and
// feedforward control policies, the Adam optimizer, and the transition-model
// interface shared by the safety filter and policy optimization.
//
// All networks keep their weights in one flat row-major parameter vector so a
// single tape leaf carries the whole parameter set and its gradient.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stlseeker/common.hpp"
#include "stlseeker/diffgraph.hpp"

namespace stlseeker::nets {

using diffgraph::Tape;
using diffgraph::Var;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Binary dropout masks, one vector per dropout layer. A deterministic mask
/// keeps every unit and scales the layer output by (1 - p_d).
struct DropoutMask {
  std::vector<Vec> layers;
  bool deterministic = false;
  double keep_scale = 1.0;
};

/// Feedforward net with tanh hidden layers and dropout after each hidden
/// activation. widths = {input, hidden..., output}. Each input listed in
/// `periodic_inputs` (an angle) enters the first layer as (sin, cos).
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::vector<int> widths, double dropout, std::vector<int> periodic_inputs = {});

  int input_dim() const { return widths_.front(); }
  const std::vector<int>& periodic_inputs() const { return periodic_; }
  /// Width of the first layer's input after the periodic encoding.
  int encoded_dim() const { return widths_.front() + static_cast<int>(periodic_.size()); }
  Vec encode(const Vec& input) const;
  Var record_encode(Var input) const;
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  double dropout() const { return dropout_; }
  std::size_t num_params() const { return num_params_; }
  std::size_t num_hidden_layers() const { return widths_.size() - 2; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  void set_params(Vec p);

  /// Uniform in +-1/sqrt(fan_in) for every weight and bias.
  void initialize(Rng& rng);

  DropoutMask sample_mask(Rng& rng) const;
  DropoutMask deterministic_mask() const;

  Var record(Var params, Var input, const DropoutMask& mask) const;
  Vec apply(const Vec& input, const DropoutMask& mask) const;

 private:
  void check_mask(const DropoutMask& mask) const;

  int layer_input(std::size_t l) const { return l == 0 ? encoded_dim() : widths_[l]; }

  std::vector<int> widths_;
  std::vector<int> periodic_;
  double dropout_ = 0.0;
  std::size_t num_params_ = 0;
  Vec params_;
};

/// Bernoulli(1 - p_d) mask for the given dropout layer widths.
DropoutMask sample_mask(double p_d, std::span<const int> layer_widths, Rng& rng);

/// F(x, u; W0, Z): predicted state difference.
Vec fnn_apply(const DenseNet& net, const Vec& x, const Vec& u, const DropoutMask& mask);

// ---------------------------------------------------------------------------
// Policies

enum class PolicyKind { kRecurrent, kFeedforward };

struct PolicyStep {
  Var control;
  std::vector<Var> hidden;
};

/// Controller architecture with a box-constrained output. Parameters are held
/// by the caller as a flat vector W.
class Policy {
 public:
  Policy(int state_dim, Box control_box);
  virtual ~Policy() = default;

  int state_dim() const { return state_dim_; }
  int control_dim() const { return control_box_.dim(); }
  const Box& control_box() const { return control_box_; }

  virtual PolicyKind kind() const = 0;
  virtual std::size_t num_params() const = 0;
  virtual Vec initial_params(Rng& rng) const = 0;
  /// Shapes of the hidden state vectors; empty for memoryless policies.
  virtual std::vector<int> hidden_sizes() const = 0;
  virtual std::vector<int> hidden_layers() const = 0;
  /// Records one step u_t = pi(x_t, h_{t-1}) on the tape that owns `params`.
  virtual PolicyStep record_step(Var params, Var x, const std::vector<Var>& hidden) const = 0;

  std::vector<Var> zero_hidden(Tape& tape) const;

 protected:
  /// lo + (hi - lo) (tanh(z) + 1) / 2
  Var squash(Var z) const;

 private:
  int state_dim_;
  Box control_box_;
};

/// Stacked LSTM cells followed by one affine output map.
class RecurrentPolicy final : public Policy {
 public:
  RecurrentPolicy(int state_dim, Box control_box, std::vector<int> hidden = {32, 32});

  PolicyKind kind() const override { return PolicyKind::kRecurrent; }
  std::size_t num_params() const override { return num_params_; }
  Vec initial_params(Rng& rng) const override;
  std::vector<int> hidden_sizes() const override;
  std::vector<int> hidden_layers() const override { return hidden_; }
  PolicyStep record_step(Var params, Var x, const std::vector<Var>& hidden) const override;

  /// Offset of the recurrent (h -> gates) block of layer l inside W; used by
  /// tests that zero the recurrence.
  struct LayerLayout {
    std::size_t weight_offset;
    std::size_t rows;
    std::size_t cols;
    int input_width;
  };
  const std::vector<LayerLayout>& layers() const { return layout_; }

 private:
  std::vector<int> hidden_;
  std::vector<LayerLayout> layout_;
  std::size_t out_offset_ = 0;
  std::size_t num_params_ = 0;
};

/// Memoryless tanh MLP controller (used for the history-dependence ablation).
class FeedforwardPolicy final : public Policy {
 public:
  FeedforwardPolicy(int state_dim, Box control_box, std::vector<int> hidden = {32, 32});

  PolicyKind kind() const override { return PolicyKind::kFeedforward; }
  std::size_t num_params() const override { return net_.num_params(); }
  Vec initial_params(Rng& rng) const override;
  std::vector<int> hidden_sizes() const override { return {}; }
  std::vector<int> hidden_layers() const override;
  PolicyStep record_step(Var params, Var x, const std::vector<Var>& hidden) const override;

 private:
  DenseNet net_;
};

std::unique_ptr<Policy> make_policy(PolicyKind kind, int state_dim, Box control_box, std::vector<int> hidden);

/// Runs a policy step by step on an internal tape, threading the hidden state.
class PolicyRunner {
 public:
  PolicyRunner(const Policy& policy, const Vec& params);

  Vec step(const Vec& x);
  void reset();

 private:
  const Policy& policy_;
  Vec params_;
  std::unique_ptr<Tape> tape_;
  Var params_var_;
  std::vector<Var> hidden_;
};

/// Single stateless step with an explicit hidden state (plain values).
std::pair<Vec, std::vector<Vec>> policy_step(const Policy& policy, const Vec& params, const Vec& x,
                                             const std::vector<Vec>& hidden);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  long step = 0;
  Vec m;
  Vec v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. With `maximize` the objective is ascended.
void adam_step(Vec& params, const Vec& grad, AdamState& state, bool maximize = false);

// ---------------------------------------------------------------------------
// Transition models

/// x_{t+1} = x_t + F(x_t, u_t).
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;
  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;
  /// Records F(x, u) on the tape owning x and u.
  virtual Var record_delta(Var x, Var u) const = 0;
};

/// The dropout net under one fixed mask.
class NetModel final : public TransitionModel {
 public:
  NetModel(const DenseNet& net, int state_dim, DropoutMask mask);

  int state_dim() const override { return state_dim_; }
  int control_dim() const override { return net_->input_dim() - state_dim_; }
  Var record_delta(Var x, Var u) const override;
  const DropoutMask& mask() const { return mask_; }

 private:
  const DenseNet* net_;
  int state_dim_;
  DropoutMask mask_;
};

/// F(x, u) = A x + B u (test oracle and exact-model experiments).
class LinearModel final : public TransitionModel {
 public:
  LinearModel(Mat a, Mat b);
  int state_dim() const override { return static_cast<int>(a_.rows()); }
  int control_dim() const override { return static_cast<int>(b_.cols()); }
  Var record_delta(Var x, Var u) const override;

 private:
  Mat a_;
  Mat b_;
  Vec packed_;
};

struct Linearization {
  Vec delta;  // F(x, u)
  Mat dx;     // dF/dx
  Mat du;     // dF/du
};

Vec predict_delta(const TransitionModel& model, const Vec& x, const Vec& u);
Linearization linearize(const TransitionModel& model, const Vec& x, const Vec& u);

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& j);

nlohmann::json policy_to_json(const Policy& policy, const Vec& params);
/// Returns the architecture and its parameters.
std::pair<std::unique_ptr<Policy>, Vec> policy_from_json(const nlohmann::json& j);

nlohmann::json vec_to_json(const Vec& v);
Vec vec_from_json(const nlohmann::json& j);

}  // namespace stlseeker::nets
