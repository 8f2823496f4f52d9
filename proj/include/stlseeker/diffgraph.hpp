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

// Reverse-mode differentiation over vector-valued expression tapes.
//
// A Tape records operations eagerly: every call computes its value
// immediately and appends a node, so the node list is always in topological
// order. The same tape can later be replayed with new leaf values through
// forward(), and differentiated with backward().
//
//   Tape tape;
//   Var x = tape.leaf("x", Vec::Constant(1, 2.0));
//   Var y = tape.leaf("y", Vec::Constant(1, 3.0));
//   Var f = x * y;
//   auto grads = tape.backward(f);   // grads["x"] == [3]

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace stlseeker::diffgraph {

using Vec = Eigen::VectorXd;
using LeafValues = std::map<std::string, Vec, std::less<>>;

/// Raised for domain violations, shape errors and misuse of the tape.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Division denominators and log arguments below this magnitude are errors.
inline constexpr double kDomainGuard = 1e-12;

enum class Op : std::uint8_t {
  kConstant,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSin,
  kCos,
  kPower,
  kScale,
  kSum,
  kSoftMin,
  kSoftMax,
  kAffine,
  kConcat,
  kSlice,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Vec& value() const;
  double scalar() const;
  std::size_t size() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void reserve(std::size_t nodes) { nodes_.reserve(nodes); }

  Var constant(Vec value);
  Var constant(double value);
  /// Registers a named input. Names must be unique on the tape.
  Var leaf(std::string name, Vec value);
  /// Unnamed input; differentiable but not addressable by name.
  Var input(Vec value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var sin(Var a);
  Var cos(Var a);
  /// Elementwise a^p for a constant exponent p.
  Var power(Var a, double p);
  Var scale(Var a, double s);
  Var sum(Var a);
  /// -(1/k) ln sum exp(-k a_i), stabilized.
  Var soft_min(Var a, double k);
  /// (1/k) ln sum exp(k a_i), stabilized.
  Var soft_max(Var a, double k);
  /// A x (+ b) where A (rows x cols, row-major) and b are read from `params`
  /// starting at `offset`. The bias, when present, follows the matrix.
  Var affine(Var params, std::size_t offset, std::size_t rows, std::size_t cols, Var x,
             bool with_bias = true);
  Var concat(const std::vector<Var>& parts);
  Var slice(Var a, std::size_t start, std::size_t length);

  const Vec& value(Var v) const { return node(v).value; }
  /// Zero vector of the right shape when no adjoint reached the node.
  Vec adjoint(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  std::size_t num_leaves() const { return leaf_names_.size(); }
  Var leaf_var(std::string_view name) const;
  const std::map<std::string, std::int32_t, std::less<>>& leaves() const { return leaf_names_; }

  /// Marks the node that forward() returns; defaults to the last node.
  void mark_output(Var v) { output_ = v.id; }
  Var output() const;

  /// Replays every node with new leaf values and returns the output value.
  /// Every named leaf must be supplied with its recorded shape.
  const Vec& forward(const LeafValues& leaf_values);
  /// Overwrites one leaf value without replaying.
  void set_leaf(std::string_view name, const Vec& value);

  /// Reverse sweep from a scalar output; returns d out / d leaf by name.
  LeafValues backward(Var out);
  LeafValues backward() { return backward(output()); }

  // Lower-level control used for vector-Jacobian products over segments.
  void zero_adjoints();
  /// Adds `seed` to the adjoint of v.
  void seed(Var v, const Vec& seed);
  /// Propagates adjoints for nodes in [begin, end), last to first.
  void propagate(std::size_t begin, std::size_t end);
  void propagate_all() { propagate(0, nodes_.size()); }

 private:
  struct Node {
    Op op = Op::kConstant;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::vector<std::int32_t> extra;  // concat operands
    double scalar = 0.0;              // exponent, scale, temperature
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool with_bias = false;
    bool needs_grad = false;
    bool has_adjoint = false;
    Vec value;
    Vec adjoint;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void check_owner(Var v) const;
  void compute(Node& n) const;
  void accumulate(std::int32_t id, const Vec& g);
  void accumulate_broadcast(std::int32_t id, const Vec& g);
  void backprop_node(const Node& n);

  std::vector<Node> nodes_;
  std::map<std::string, std::int32_t, std::less<>> leaf_names_;
  std::int32_t output_ = -1;
};

// Expression sugar; both operands must live on the same tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var sin(Var a);
Var cos(Var a);
Var pow(Var a, double p);
Var sum(Var a);
Var soft_min(Var a, double k);
Var soft_max(Var a, double k);

/// Plain-value soft-min/soft-max with the same stabilization as the tape ops.
double soft_min_value(const Vec& a, double k);
double soft_max_value(const Vec& a, double k);

/// Max over named leaves and components of |analytic - central difference| /
/// max(1, |analytic|). Replays the tape; leaves are restored afterwards.
double grad_check(Tape& tape, const LeafValues& leaf_values, double step);

}  // namespace stlseeker::diffgraph
