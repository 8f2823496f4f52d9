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

#include "stlseeker/nets.hpp"

#include <algorithm>
#include <cmath>

namespace stlseeker::nets {
namespace {

void fill_uniform(Vec& params, std::size_t offset, std::size_t count, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < count; ++i) params[static_cast<Eigen::Index>(offset + i)] = dist(rng);
}

Vec tanh_vec(const Vec& v) { return v.array().tanh().matrix(); }

}  // namespace

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(std::vector<int> widths, double dropout, std::vector<int> periodic_inputs)
    : widths_(std::move(widths)), periodic_(std::move(periodic_inputs)), dropout_(dropout) {
  if (widths_.size() < 2) throw ShapeError("a dense net needs at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw ShapeError("layer widths must be positive");
  }
  if (!(dropout_ >= 0.0 && dropout_ < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  std::sort(periodic_.begin(), periodic_.end());
  if (std::adjacent_find(periodic_.begin(), periodic_.end()) != periodic_.end()) {
    throw ShapeError("periodic inputs must be distinct");
  }
  for (int i : periodic_) {
    if (i < 0 || i >= widths_.front()) throw ShapeError("periodic input index out of range");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    num_params_ += static_cast<std::size_t>(widths_[l + 1]) * static_cast<std::size_t>(layer_input(l) + 1);
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(num_params_));
}

void DenseNet::set_params(Vec p) {
  if (static_cast<std::size_t>(p.size()) != num_params_) {
    throw ShapeError("expected " + std::to_string(num_params_) + " parameters, got " + std::to_string(p.size()));
  }
  params_ = std::move(p);
}

void DenseNet::initialize(Rng& rng) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const auto count = static_cast<std::size_t>(widths_[l + 1]) * static_cast<std::size_t>(layer_input(l) + 1);
    fill_uniform(params_, offset, count, 1.0 / std::sqrt(static_cast<double>(layer_input(l))), rng);
    offset += count;
  }
}

DropoutMask sample_mask(double p_d, std::span<const int> layer_widths, Rng& rng) {
  DropoutMask mask;
  std::bernoulli_distribution keep(1.0 - p_d);
  for (int w : layer_widths) {
    Vec z(w);
    for (int i = 0; i < w; ++i) z[i] = keep(rng) ? 1.0 : 0.0;
    mask.layers.push_back(std::move(z));
  }
  return mask;
}

DropoutMask DenseNet::sample_mask(Rng& rng) const {
  const std::span<const int> hidden(widths_.data() + 1, num_hidden_layers());
  return nets::sample_mask(dropout_, hidden, rng);
}

DropoutMask DenseNet::deterministic_mask() const {
  DropoutMask mask;
  mask.deterministic = true;
  mask.keep_scale = 1.0 - dropout_;
  return mask;
}

void DenseNet::check_mask(const DropoutMask& mask) const {
  if (mask.deterministic) return;
  if (mask.layers.size() != num_hidden_layers()) throw ShapeError("mask does not match the dropout layers");
  for (std::size_t l = 0; l < mask.layers.size(); ++l) {
    if (mask.layers[l].size() != widths_[l + 1]) throw ShapeError("mask width mismatch at layer " + std::to_string(l));
  }
}

Vec DenseNet::encode(const Vec& input) const {
  if (input.size() != input_dim()) throw ShapeError("dense net input dimension mismatch");
  if (periodic_.empty()) return input;
  Vec out(encoded_dim());
  Eigen::Index j = 0;
  std::size_t next = 0;
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    if (next < periodic_.size() && periodic_[next] == i) {
      out[j++] = std::sin(input[i]);
      out[j++] = std::cos(input[i]);
      ++next;
    } else {
      out[j++] = input[i];
    }
  }
  return out;
}

Var DenseNet::record_encode(Var input) const {
  if (static_cast<int>(input.size()) != input_dim()) throw ShapeError("dense net input dimension mismatch");
  if (periodic_.empty()) return input;
  Tape& tape = *input.tape;
  std::vector<Var> parts;
  std::size_t start = 0;
  for (int p : periodic_) {
    const auto i = static_cast<std::size_t>(p);
    if (i > start) parts.push_back(tape.slice(input, start, i - start));
    const Var angle = tape.slice(input, i, 1);
    parts.push_back(tape.sin(angle));
    parts.push_back(tape.cos(angle));
    start = i + 1;
  }
  if (start < input.size()) parts.push_back(tape.slice(input, start, input.size() - start));
  return tape.concat(parts);
}

Var DenseNet::record(Var params, Var input, const DropoutMask& mask) const {
  check_mask(mask);
  Tape& tape = *params.tape;
  std::size_t offset = 0;
  Var h = record_encode(input);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const auto rows = static_cast<std::size_t>(widths_[l + 1]);
    const auto cols = static_cast<std::size_t>(layer_input(l));
    h = tape.affine(params, offset, rows, cols, h);
    offset += rows * (cols + 1);
    if (l + 2 < widths_.size()) {
      h = tape.tanh(h);
      if (mask.deterministic) {
        if (mask.keep_scale != 1.0) h = tape.scale(h, mask.keep_scale);
      } else {
        h = tape.mul(h, tape.constant(mask.layers[l]));
      }
    }
  }
  return h;
}

Vec DenseNet::apply(const Vec& input, const DropoutMask& mask) const {
  check_mask(mask);
  std::size_t offset = 0;
  Vec h = encode(input);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const Eigen::Index rows = widths_[l + 1];
    const Eigen::Index cols = layer_input(l);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
        params_.data() + offset, rows, cols);
    Vec z = w * h + params_.segment(static_cast<Eigen::Index>(offset) + rows * cols, rows);
    offset += static_cast<std::size_t>(rows * (cols + 1));
    if (l + 2 < widths_.size()) {
      h = tanh_vec(z);
      if (mask.deterministic) {
        h *= mask.keep_scale;
      } else {
        h = h.cwiseProduct(mask.layers[l]);
      }
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Vec fnn_apply(const DenseNet& net, const Vec& x, const Vec& u, const DropoutMask& mask) {
  if (x.size() + u.size() != net.input_dim()) throw ShapeError("state and control do not match the net input");
  Vec in(x.size() + u.size());
  in << x, u;
  return net.apply(in, mask);
}

// ---------------------------------------------------------------------------
// Policies

Policy::Policy(int state_dim, Box control_box) : state_dim_(state_dim), control_box_(std::move(control_box)) {
  if (state_dim_ <= 0) throw ShapeError("state dimension must be positive");
  if (control_box_.dim() <= 0) throw ShapeError("control box is empty");
}

std::vector<Var> Policy::zero_hidden(Tape& tape) const {
  std::vector<Var> out;
  for (int s : hidden_sizes()) out.push_back(tape.constant(Vec::Zero(s)));
  return out;
}

Var Policy::squash(Var z) const {
  Tape& tape = *z.tape;
  const Vec half = 0.5 * (control_box_.hi - control_box_.lo);
  Var spread = tape.mul(tape.constant(half), tape.tanh(z));
  return tape.add(tape.constant(control_box_.center()), spread);
}

RecurrentPolicy::RecurrentPolicy(int state_dim, Box control_box, std::vector<int> hidden)
    : Policy(state_dim, std::move(control_box)), hidden_(std::move(hidden)) {
  if (hidden_.empty()) throw ShapeError("a recurrent policy needs at least one cell");
  int in = state_dim;
  for (int h : hidden_) {
    if (h <= 0) throw ShapeError("hidden widths must be positive");
    LayerLayout layer{num_params_, static_cast<std::size_t>(4 * h), static_cast<std::size_t>(in + h), in};
    layout_.push_back(layer);
    num_params_ += layer.rows * (layer.cols + 1);
    in = h;
  }
  out_offset_ = num_params_;
  num_params_ += static_cast<std::size_t>(control_dim()) * static_cast<std::size_t>(in + 1);
}

std::vector<int> RecurrentPolicy::hidden_sizes() const {
  // (h, c) per cell.
  std::vector<int> out;
  for (int h : hidden_) {
    out.push_back(h);
    out.push_back(h);
  }
  return out;
}

Vec RecurrentPolicy::initial_params(Rng& rng) const {
  Vec w = Vec::Zero(static_cast<Eigen::Index>(num_params_));
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const LayerLayout& layer = layout_[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.cols));
    fill_uniform(w, layer.weight_offset, layer.rows * (layer.cols + 1), bound, rng);
    const auto h = static_cast<Eigen::Index>(hidden_[l]);
    const auto bias = static_cast<Eigen::Index>(layer.weight_offset + layer.rows * layer.cols);
    w.segment(bias + h, h).setOnes();  // forget gate
  }
  const auto in = static_cast<std::size_t>(hidden_.back());
  fill_uniform(w, out_offset_, static_cast<std::size_t>(control_dim()) * (in + 1),
               1.0 / std::sqrt(static_cast<double>(in)), rng);
  return w;
}

PolicyStep RecurrentPolicy::record_step(Var params, Var x, const std::vector<Var>& hidden) const {
  if (static_cast<int>(x.size()) != state_dim()) throw ShapeError("policy state dimension mismatch");
  if (hidden.size() != 2 * hidden_.size()) throw ShapeError("hidden state does not match the cell stack");
  Tape& tape = *params.tape;
  PolicyStep step;
  Var in = x;
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const LayerLayout& layer = layout_[l];
    const auto h = static_cast<std::size_t>(hidden_[l]);
    Var gates = tape.affine(params, layer.weight_offset, layer.rows, layer.cols, tape.concat({in, hidden[2 * l]}));
    Var i = tape.sigmoid(tape.slice(gates, 0, h));
    Var f = tape.sigmoid(tape.slice(gates, h, h));
    Var g = tape.tanh(tape.slice(gates, 2 * h, h));
    Var o = tape.sigmoid(tape.slice(gates, 3 * h, h));
    Var c = tape.add(tape.mul(f, hidden[2 * l + 1]), tape.mul(i, g));
    Var hn = tape.mul(o, tape.tanh(c));
    step.hidden.push_back(hn);
    step.hidden.push_back(c);
    in = hn;
  }
  Var z = tape.affine(params, out_offset_, static_cast<std::size_t>(control_dim()),
                      static_cast<std::size_t>(hidden_.back()), in);
  step.control = squash(z);
  return step;
}

FeedforwardPolicy::FeedforwardPolicy(int state_dim, Box control_box, std::vector<int> hidden)
    : Policy(state_dim, std::move(control_box)) {
  std::vector<int> widths{state_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(control_dim());
  net_ = DenseNet(std::move(widths), 0.0);
}

std::vector<int> FeedforwardPolicy::hidden_layers() const {
  const auto& w = net_.widths();
  return {w.begin() + 1, w.end() - 1};
}

Vec FeedforwardPolicy::initial_params(Rng& rng) const {
  DenseNet net = net_;
  net.initialize(rng);
  return net.params();
}

PolicyStep FeedforwardPolicy::record_step(Var params, Var x, const std::vector<Var>& hidden) const {
  if (!hidden.empty()) throw ShapeError("a feedforward policy carries no hidden state");
  if (static_cast<int>(x.size()) != state_dim()) throw ShapeError("policy state dimension mismatch");
  PolicyStep step;
  step.control = squash(net_.record(params, x, net_.deterministic_mask()));
  return step;
}

std::unique_ptr<Policy> make_policy(PolicyKind kind, int state_dim, Box control_box, std::vector<int> hidden) {
  if (kind == PolicyKind::kRecurrent) {
    return std::make_unique<RecurrentPolicy>(state_dim, std::move(control_box), std::move(hidden));
  }
  return std::make_unique<FeedforwardPolicy>(state_dim, std::move(control_box), std::move(hidden));
}

PolicyRunner::PolicyRunner(const Policy& policy, const Vec& params) : policy_(policy), params_(params) {
  if (static_cast<std::size_t>(params.size()) != policy.num_params()) throw ShapeError("policy parameter count mismatch");
  reset();
}

void PolicyRunner::reset() {
  tape_ = std::make_unique<Tape>();
  params_var_ = tape_->constant(params_);
  hidden_ = policy_.zero_hidden(*tape_);
}

Vec PolicyRunner::step(const Vec& x) {
  // Keep the tape short: only the parameters and the current hidden state
  // need to survive between steps.
  std::vector<Vec> hidden_values;
  for (const Var& h : hidden_) hidden_values.push_back(h.value());
  tape_ = std::make_unique<Tape>();
  params_var_ = tape_->constant(params_);
  hidden_.clear();
  for (const Vec& h : hidden_values) hidden_.push_back(tape_->constant(h));
  PolicyStep s = policy_.record_step(params_var_, tape_->constant(x), hidden_);
  hidden_ = std::move(s.hidden);
  return s.control.value();
}

std::pair<Vec, std::vector<Vec>> policy_step(const Policy& policy, const Vec& params, const Vec& x,
                                             const std::vector<Vec>& hidden) {
  if (static_cast<std::size_t>(params.size()) != policy.num_params()) throw ShapeError("policy parameter count mismatch");
  const std::vector<int> sizes = policy.hidden_sizes();
  if (hidden.size() != sizes.size()) throw ShapeError("hidden state does not match the policy");
  Tape tape;
  Var w = tape.constant(params);
  std::vector<Var> h;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i].size() != sizes[i]) throw ShapeError("hidden state width mismatch");
    h.push_back(tape.constant(hidden[i]));
  }
  PolicyStep s = policy.record_step(w, tape.constant(x), h);
  std::vector<Vec> next;
  for (const Var& v : s.hidden) next.push_back(v.value());
  return {s.control.value(), std::move(next)};
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Vec& params, const Vec& grad, AdamState& state, bool maximize) {
  if (grad.size() != params.size()) throw ShapeError("gradient and parameter shapes differ");
  if (state.m.size() != params.size()) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
    state.step = 0;
  }
  const Vec g = maximize ? Vec(-grad) : grad;
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Vec m_hat = state.m / c1;
  const Vec v_hat = state.v / c2;
  params.array() -= state.lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
}

// ---------------------------------------------------------------------------
// Transition models

NetModel::NetModel(const DenseNet& net, int state_dim, DropoutMask mask)
    : net_(&net), state_dim_(state_dim), mask_(std::move(mask)) {
  if (net.output_dim() != state_dim) throw ShapeError("model output must equal the state dimension");
  if (net.input_dim() <= state_dim) throw ShapeError("model input must include a control");
}

Var NetModel::record_delta(Var x, Var u) const {
  Tape& tape = *x.tape;
  return net_->record(tape.constant(net_->params()), tape.concat({x, u}), mask_);
}

LinearModel::LinearModel(Mat a, Mat b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols() || b_.rows() != a_.rows()) throw ShapeError("linear model shapes are inconsistent");
  const Eigen::Index n = a_.rows();
  const Eigen::Index m = b_.cols();
  packed_.resize(n * n + n * m);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(packed_.data(), n, n) = a_;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(packed_.data() + n * n, n, m) = b_;
}

Var LinearModel::record_delta(Var x, Var u) const {
  Tape& tape = *x.tape;
  const auto n = static_cast<std::size_t>(a_.rows());
  const auto m = static_cast<std::size_t>(b_.cols());
  Var p = tape.constant(packed_);
  return tape.add(tape.affine(p, 0, n, n, x, false), tape.affine(p, n * n, n, m, u, false));
}

Vec predict_delta(const TransitionModel& model, const Vec& x, const Vec& u) {
  Tape tape;
  return model.record_delta(tape.constant(x), tape.constant(u)).value();
}

Linearization linearize(const TransitionModel& model, const Vec& x, const Vec& u) {
  Tape tape;
  Var xv = tape.input(x);
  Var uv = tape.input(u);
  Var d = model.record_delta(xv, uv);
  const Eigen::Index n = d.value().size();
  Linearization out;
  out.delta = d.value();
  out.dx.resize(n, x.size());
  out.du.resize(n, u.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    tape.zero_adjoints();
    tape.seed(d, Vec::Unit(n, i));
    tape.propagate_all();
    out.dx.row(i) = tape.adjoint(xv).transpose();
    out.du.row(i) = tape.adjoint(uv).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json to_json(const DenseNet& net) {
  return {{"widths", net.widths()},
          {"dropout", net.dropout()},
          {"periodic_inputs", net.periodic_inputs()},
          {"params", vec_to_json(net.params())}};
}

DenseNet dense_net_from_json(const nlohmann::json& j) {
  DenseNet net(j.at("widths").get<std::vector<int>>(), j.at("dropout").get<double>(),
               j.value("periodic_inputs", std::vector<int>{}));
  net.set_params(vec_from_json(j.at("params")));
  return net;
}

nlohmann::json policy_to_json(const Policy& policy, const Vec& params) {
  return {{"kind", policy.kind() == PolicyKind::kRecurrent ? "recurrent" : "feedforward"},
          {"state_dim", policy.state_dim()},
          {"control_lo", vec_to_json(policy.control_box().lo)},
          {"control_hi", vec_to_json(policy.control_box().hi)},
          {"hidden", policy.hidden_layers()},
          {"params", vec_to_json(params)}};
}

std::pair<std::unique_ptr<Policy>, Vec> policy_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  PolicyKind k;
  if (kind == "recurrent") {
    k = PolicyKind::kRecurrent;
  } else if (kind == "feedforward") {
    k = PolicyKind::kFeedforward;
  } else {
    throw std::invalid_argument("unknown policy kind '" + kind + "'");
  }
  Box box(vec_from_json(j.at("control_lo")), vec_from_json(j.at("control_hi")));
  auto policy = make_policy(k, j.at("state_dim").get<int>(), std::move(box), j.at("hidden").get<std::vector<int>>());
  Vec params = vec_from_json(j.at("params"));
  if (static_cast<std::size_t>(params.size()) != policy->num_params()) throw ShapeError("policy parameter count mismatch");
  return {std::move(policy), std::move(params)};
}

}  // namespace stlseeker::nets
