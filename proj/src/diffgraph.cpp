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

#include "stlseeker/diffgraph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace stlseeker::diffgraph {
namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Softmax weights of s * a; also returns the log-sum-exp of s * a.
Vec lse_weights(const Vec& a, double s, double* lse) {
  const Vec z = s * a;
  const double m = z.maxCoeff();
  Vec w = (z.array() - m).exp().matrix();
  const double total = w.sum();
  if (lse != nullptr) *lse = m + std::log(total);
  return w / total;
}

std::size_t broadcast_size(std::size_t a, std::size_t b) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw EvaluationError("shape mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}

Vec expand(const Vec& v, std::size_t n) {
  if (static_cast<std::size_t>(v.size()) == n) return v;
  return Vec::Constant(static_cast<Eigen::Index>(n), v[0]);
}

}  // namespace

const Vec& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const Vec& v = value();
  if (v.size() != 1) throw EvaluationError("scalar() on a vector of size " + std::to_string(v.size()));
  return v[0];
}

std::size_t Var::size() const { return static_cast<std::size_t>(value().size()); }

const Tape::Node& Tape::node(Var v) const {
  check_owner(v);
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw EvaluationError("variable does not belong to this tape");
  }
}

Var Tape::push(Node n) {
  compute(n);
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

Var Tape::constant(Vec value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Vec::Constant(1, value)); }

Var Tape::leaf(std::string name, Vec value) {
  if (leaf_names_.count(name) != 0) throw EvaluationError("duplicate leaf name '" + name + "'");
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = true;
  Var v = push(std::move(n));
  leaf_names_.emplace(std::move(name), v.id);
  return v;
}

Var Tape::input(Vec value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

#define STLSEEKER_UNARY(NAME, OPCODE)        \
  Var Tape::NAME(Var a) {                    \
    check_owner(a);                          \
    Node n;                                  \
    n.op = OPCODE;                           \
    n.a = a.id;                              \
    n.needs_grad = nodes_[a.id].needs_grad;  \
    return push(std::move(n));               \
  }

STLSEEKER_UNARY(neg, Op::kNeg)
STLSEEKER_UNARY(exp, Op::kExp)
STLSEEKER_UNARY(log, Op::kLog)
STLSEEKER_UNARY(tanh, Op::kTanh)
STLSEEKER_UNARY(sigmoid, Op::kSigmoid)
STLSEEKER_UNARY(sin, Op::kSin)
STLSEEKER_UNARY(cos, Op::kCos)
STLSEEKER_UNARY(sum, Op::kSum)
#undef STLSEEKER_UNARY

#define STLSEEKER_BINARY(NAME, OPCODE)                                         \
  Var Tape::NAME(Var a, Var b) {                                               \
    check_owner(a);                                                            \
    check_owner(b);                                                            \
    Node n;                                                                    \
    n.op = OPCODE;                                                             \
    n.a = a.id;                                                                \
    n.b = b.id;                                                                \
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;         \
    return push(std::move(n));                                                 \
  }

STLSEEKER_BINARY(add, Op::kAdd)
STLSEEKER_BINARY(sub, Op::kSub)
STLSEEKER_BINARY(mul, Op::kMul)
STLSEEKER_BINARY(div, Op::kDiv)
#undef STLSEEKER_BINARY

Var Tape::power(Var a, double p) {
  check_owner(a);
  Node n;
  n.op = Op::kPower;
  n.a = a.id;
  n.scalar = p;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  check_owner(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::soft_min(Var a, double k) {
  check_owner(a);
  if (!(k > 0.0)) throw EvaluationError("soft-min temperature must be positive");
  Node n;
  n.op = Op::kSoftMin;
  n.a = a.id;
  n.scalar = k;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::soft_max(Var a, double k) {
  check_owner(a);
  if (!(k > 0.0)) throw EvaluationError("soft-max temperature must be positive");
  Node n;
  n.op = Op::kSoftMax;
  n.a = a.id;
  n.scalar = k;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::affine(Var params, std::size_t offset, std::size_t rows, std::size_t cols, Var x,
                 bool with_bias) {
  check_owner(params);
  check_owner(x);
  Node n;
  n.op = Op::kAffine;
  n.a = params.id;
  n.b = x.id;
  n.offset = offset;
  n.rows = rows;
  n.cols = cols;
  n.with_bias = with_bias;
  n.needs_grad = nodes_[params.id].needs_grad || nodes_[x.id].needs_grad;
  return push(std::move(n));
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw EvaluationError("concat of nothing");
  Node n;
  n.op = Op::kConcat;
  for (const Var& p : parts) {
    check_owner(p);
    n.extra.push_back(p.id);
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  return push(std::move(n));
}

Var Tape::slice(Var a, std::size_t start, std::size_t length) {
  check_owner(a);
  Node n;
  n.op = Op::kSlice;
  n.a = a.id;
  n.offset = start;
  n.rows = length;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

void Tape::compute(Node& n) const {
  auto val = [this](std::int32_t id) -> const Vec& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::kConstant:
    case Op::kLeaf:
      return;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Vec& x = val(n.a);
      const Vec& y = val(n.b);
      const std::size_t size = broadcast_size(static_cast<std::size_t>(x.size()),
                                              static_cast<std::size_t>(y.size()));
      const Vec xe = expand(x, size);
      const Vec ye = expand(y, size);
      if (n.op == Op::kAdd) {
        n.value = xe + ye;
      } else if (n.op == Op::kSub) {
        n.value = xe - ye;
      } else if (n.op == Op::kMul) {
        n.value = xe.cwiseProduct(ye);
      } else {
        if ((ye.array().abs() < kDomainGuard).any()) {
          throw EvaluationError("division by a value with magnitude below 1e-12");
        }
        n.value = xe.cwiseQuotient(ye);
      }
      return;
    }
    case Op::kNeg:
      n.value = -val(n.a);
      return;
    case Op::kExp:
      n.value = val(n.a).array().exp().matrix();
      return;
    case Op::kLog:
      if ((val(n.a).array() < kDomainGuard).any()) {
        throw EvaluationError("log of a value below 1e-12");
      }
      n.value = val(n.a).array().log().matrix();
      return;
    case Op::kTanh:
      n.value = val(n.a).array().tanh().matrix();
      return;
    case Op::kSigmoid:
      n.value = val(n.a).unaryExpr(&stable_sigmoid);
      return;
    case Op::kSin:
      n.value = val(n.a).array().sin().matrix();
      return;
    case Op::kCos:
      n.value = val(n.a).array().cos().matrix();
      return;
    case Op::kPower: {
      const Vec& x = val(n.a);
      const double p = n.scalar;
      const bool integral = p == std::floor(p);
      if (!integral && (x.array() < 0.0).any()) {
        throw EvaluationError("non-integer power of a negative value");
      }
      n.value = x.array().pow(p).matrix();
      return;
    }
    case Op::kScale:
      n.value = n.scalar * val(n.a);
      return;
    case Op::kSum:
      n.value = Vec::Constant(1, val(n.a).sum());
      return;
    case Op::kSoftMin: {
      if (val(n.a).size() == 0) throw EvaluationError("soft-min of an empty vector");
      double lse = 0.0;
      lse_weights(val(n.a), -n.scalar, &lse);
      n.value = Vec::Constant(1, -lse / n.scalar);
      return;
    }
    case Op::kSoftMax: {
      if (val(n.a).size() == 0) throw EvaluationError("soft-max of an empty vector");
      double lse = 0.0;
      lse_weights(val(n.a), n.scalar, &lse);
      n.value = Vec::Constant(1, lse / n.scalar);
      return;
    }
    case Op::kAffine: {
      const Vec& p = val(n.a);
      const Vec& x = val(n.b);
      const std::size_t need = n.offset + n.rows * n.cols + (n.with_bias ? n.rows : 0);
      if (static_cast<std::size_t>(p.size()) < need) {
        throw EvaluationError("affine parameters out of range");
      }
      if (static_cast<std::size_t>(x.size()) != n.cols) {
        throw EvaluationError("affine input has size " + std::to_string(x.size()) + ", expected " +
                              std::to_string(n.cols));
      }
      const RowMajorMap A(p.data() + n.offset, static_cast<Eigen::Index>(n.rows),
                          static_cast<Eigen::Index>(n.cols));
      n.value.noalias() = A * x;
      if (n.with_bias) {
        n.value += p.segment(static_cast<Eigen::Index>(n.offset + n.rows * n.cols),
                             static_cast<Eigen::Index>(n.rows));
      }
      return;
    }
    case Op::kConcat: {
      Eigen::Index total = 0;
      for (auto id : n.extra) total += val(id).size();
      n.value.resize(total);
      Eigen::Index at = 0;
      for (auto id : n.extra) {
        const Vec& part = val(id);
        n.value.segment(at, part.size()) = part;
        at += part.size();
      }
      return;
    }
    case Op::kSlice: {
      const Vec& x = val(n.a);
      if (n.offset + n.rows > static_cast<std::size_t>(x.size())) {
        throw EvaluationError("slice out of range");
      }
      n.value = x.segment(static_cast<Eigen::Index>(n.offset), static_cast<Eigen::Index>(n.rows));
      return;
    }
  }
}

Vec Tape::adjoint(Var v) const {
  const Node& n = node(v);
  if (n.has_adjoint) return n.adjoint;
  return Vec::Zero(n.value.size());
}

Var Tape::leaf_var(std::string_view name) const {
  auto it = leaf_names_.find(name);
  if (it == leaf_names_.end()) throw EvaluationError("unknown leaf '" + std::string(name) + "'");
  return Var{const_cast<Tape*>(this), it->second};
}

Var Tape::output() const {
  if (nodes_.empty()) throw EvaluationError("empty tape has no output");
  const std::int32_t id = output_ >= 0 ? output_ : static_cast<std::int32_t>(nodes_.size()) - 1;
  return Var{const_cast<Tape*>(this), id};
}

void Tape::set_leaf(std::string_view name, const Vec& value) {
  Var v = leaf_var(name);
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.value.size() != value.size()) {
    throw EvaluationError("leaf '" + std::string(name) + "' has size " + std::to_string(n.value.size()) +
                          ", got " + std::to_string(value.size()));
  }
  n.value = value;
}

const Vec& Tape::forward(const LeafValues& leaf_values) {
  for (const auto& [name, id] : leaf_names_) {
    auto it = leaf_values.find(name);
    if (it == leaf_values.end()) throw EvaluationError("missing value for leaf '" + name + "'");
    set_leaf(name, it->second);
  }
  for (Node& n : nodes_) compute(n);
  return nodes_[static_cast<std::size_t>(output().id)].value;
}

void Tape::zero_adjoints() {
  for (Node& n : nodes_) n.has_adjoint = false;
}

void Tape::accumulate(std::int32_t id, const Vec& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.has_adjoint) {
    n.adjoint += g;
  } else {
    n.adjoint = g;
    n.has_adjoint = true;
  }
}

// Reduces a broadcast gradient back to a size-1 operand when needed.
void Tape::accumulate_broadcast(std::int32_t id, const Vec& g) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.value.size() == 1 && g.size() != 1) {
    accumulate(id, Vec::Constant(1, g.sum()));
  } else {
    accumulate(id, g);
  }
}

void Tape::seed(Var v, const Vec& g) {
  check_owner(v);
  if (g.size() != nodes_[static_cast<std::size_t>(v.id)].value.size()) {
    throw EvaluationError("seed shape mismatch");
  }
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.has_adjoint) {
    n.adjoint += g;
  } else {
    n.adjoint = g;
    n.has_adjoint = true;
  }
}

void Tape::backprop_node(const Node& n) {
  const Vec& g = n.adjoint;
  auto val = [this](std::int32_t id) -> const Vec& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::kConstant:
    case Op::kLeaf:
      return;
    case Op::kAdd:
      accumulate_broadcast(n.a, g);
      accumulate_broadcast(n.b, g);
      return;
    case Op::kSub:
      accumulate_broadcast(n.a, g);
      accumulate_broadcast(n.b, -g);
      return;
    case Op::kMul: {
      const std::size_t size = static_cast<std::size_t>(g.size());
      const Vec xe = expand(val(n.a), size);
      const Vec ye = expand(val(n.b), size);
      accumulate_broadcast(n.a, g.cwiseProduct(ye));
      accumulate_broadcast(n.b, g.cwiseProduct(xe));
      return;
    }
    case Op::kDiv: {
      const std::size_t size = static_cast<std::size_t>(g.size());
      const Vec xe = expand(val(n.a), size);
      const Vec ye = expand(val(n.b), size);
      accumulate_broadcast(n.a, g.cwiseQuotient(ye));
      accumulate_broadcast(n.b, (-g.array() * xe.array() / (ye.array() * ye.array())).matrix());
      return;
    }
    case Op::kNeg:
      accumulate(n.a, -g);
      return;
    case Op::kExp:
      accumulate(n.a, g.cwiseProduct(n.value));
      return;
    case Op::kLog:
      accumulate(n.a, g.cwiseQuotient(val(n.a)));
      return;
    case Op::kTanh:
      accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
      return;
    case Op::kSigmoid:
      accumulate(n.a, (g.array() * n.value.array() * (1.0 - n.value.array())).matrix());
      return;
    case Op::kSin:
      accumulate(n.a, g.cwiseProduct(val(n.a).array().cos().matrix()));
      return;
    case Op::kCos:
      accumulate(n.a, (-g.array() * val(n.a).array().sin()).matrix());
      return;
    case Op::kPower: {
      const Vec& x = val(n.a);
      const double p = n.scalar;
      if (p < 1.0 && p != 0.0 && (x.array() == 0.0).any()) {
        throw EvaluationError("power derivative is unbounded at zero");
      }
      accumulate(n.a, (g.array() * p * x.array().pow(p - 1.0)).matrix());
      return;
    }
    case Op::kScale:
      accumulate(n.a, n.scalar * g);
      return;
    case Op::kSum:
      accumulate(n.a, Vec::Constant(val(n.a).size(), g[0]));
      return;
    case Op::kSoftMin:
      accumulate(n.a, g[0] * lse_weights(val(n.a), -n.scalar, nullptr));
      return;
    case Op::kSoftMax:
      accumulate(n.a, g[0] * lse_weights(val(n.a), n.scalar, nullptr));
      return;
    case Op::kAffine: {
      const Vec& p = val(n.a);
      const Vec& x = val(n.b);
      const auto rows = static_cast<Eigen::Index>(n.rows);
      const auto cols = static_cast<Eigen::Index>(n.cols);
      const RowMajorMap A(p.data() + n.offset, rows, cols);
      if (nodes_[static_cast<std::size_t>(n.b)].needs_grad) {
        accumulate(n.b, A.transpose() * g);
      }
      Node& pn = nodes_[static_cast<std::size_t>(n.a)];
      if (pn.needs_grad) {
        if (!pn.has_adjoint) {
          pn.adjoint = Vec::Zero(p.size());
          pn.has_adjoint = true;
        }
        RowMajorMutMap dA(pn.adjoint.data() + n.offset, rows, cols);
        dA.noalias() += g * x.transpose();
        if (n.with_bias) {
          pn.adjoint.segment(static_cast<Eigen::Index>(n.offset + n.rows * n.cols), rows) += g;
        }
      }
      return;
    }
    case Op::kConcat: {
      Eigen::Index at = 0;
      for (auto id : n.extra) {
        const Eigen::Index len = val(id).size();
        accumulate(id, g.segment(at, len));
        at += len;
      }
      return;
    }
    case Op::kSlice: {
      Node& src = nodes_[static_cast<std::size_t>(n.a)];
      if (!src.needs_grad) return;
      if (!src.has_adjoint) {
        src.adjoint = Vec::Zero(src.value.size());
        src.has_adjoint = true;
      }
      src.adjoint.segment(static_cast<Eigen::Index>(n.offset), static_cast<Eigen::Index>(n.rows)) += g;
      return;
    }
  }
}

void Tape::propagate(std::size_t begin, std::size_t end) {
  end = std::min(end, nodes_.size());
  for (std::size_t i = end; i-- > begin;) {
    const Node& n = nodes_[i];
    if (!n.has_adjoint || !n.needs_grad) continue;
    backprop_node(n);
  }
}

LeafValues Tape::backward(Var out) {
  check_owner(out);
  if (nodes_[static_cast<std::size_t>(out.id)].value.size() != 1) {
    throw EvaluationError("backward() needs a scalar output");
  }
  zero_adjoints();
  seed(out, Vec::Ones(1));
  propagate(0, static_cast<std::size_t>(out.id) + 1);
  LeafValues grads;
  for (const auto& [name, id] : leaf_names_) grads.emplace(name, adjoint(Var{this, id}));
  return grads;
}

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape->div(a, b); }
Var operator-(Var a) { return a.tape->neg(a); }
Var exp(Var a) { return a.tape->exp(a); }
Var log(Var a) { return a.tape->log(a); }
Var tanh(Var a) { return a.tape->tanh(a); }
Var sin(Var a) { return a.tape->sin(a); }
Var cos(Var a) { return a.tape->cos(a); }
Var sigmoid(Var a) { return a.tape->sigmoid(a); }
Var pow(Var a, double p) { return a.tape->power(a, p); }
Var sum(Var a) { return a.tape->sum(a); }
Var soft_min(Var a, double k) { return a.tape->soft_min(a, k); }
Var soft_max(Var a, double k) { return a.tape->soft_max(a, k); }

double soft_min_value(const Vec& a, double k) {
  double lse = 0.0;
  lse_weights(a, -k, &lse);
  return -lse / k;
}

double soft_max_value(const Vec& a, double k) {
  double lse = 0.0;
  lse_weights(a, k, &lse);
  return lse / k;
}

double grad_check(Tape& tape, const LeafValues& leaf_values, double step) {
  if (!(step > 0.0)) throw EvaluationError("grad_check step must be positive");
  const Var out = tape.output();
  tape.forward(leaf_values);
  if (out.size() != 1) throw EvaluationError("grad_check needs a scalar output");
  const LeafValues analytic = tape.backward(out);

  double worst = 0.0;
  LeafValues probe = leaf_values;
  for (auto& [name, value] : probe) {
    if (tape.leaves().count(name) == 0) continue;
    const Vec& grad = analytic.at(name);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = tape.forward(probe)[0];
      value[i] = saved - step;
      const double down = tape.forward(probe)[0];
      value[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(grad[i])));
    }
  }
  tape.forward(leaf_values);
  return worst;
}

}  // namespace stlseeker::diffgraph
