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

// Signal temporal logic over discrete-time signals.
//
// Formulas are immutable trees shared by pointer. Two semantics are provided:
// the classical min/max robustness, which is the only one used for
// satisfaction verdicts, and a smooth log-sum-exp surrogate recorded on a
// diffgraph tape for gradient-based training.

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stlseeker/diffgraph.hpp"

namespace stlseeker::stl {

using Vec = Eigen::VectorXd;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Trajectory too short for the formula horizon, bad temperature, etc.
class RobustnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed integer time window [a, b].
struct Interval {
  int a = 0;
  int b = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class PredicateKind { kAffine, kInsideBox, kInsideDisk, kOutsideDisk };

/// Atomic proposition l(x) >= 0.
///
///   affine:       normal . x - offset
///   inside-box:   min(px - lo_x, hi_x - px, py - lo_y, hi_y - py)
///   inside-disk:  r^2 - |p - c|^2
///   outside-disk: |p - c|^2 - r^2
///
/// where p = (x[px_index], x[py_index]).
struct Predicate {
  PredicateKind kind = PredicateKind::kAffine;
  Vec normal;
  double offset = 0.0;
  Eigen::Vector2d lo = Eigen::Vector2d::Zero();
  Eigen::Vector2d hi = Eigen::Vector2d::Zero();
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.0;
  int px_index = 0;
  int py_index = 1;

  static Predicate affine(Vec normal, double offset);
  static Predicate inside_box(Eigen::Vector2d lo, Eigen::Vector2d hi);
  static Predicate inside_disk(Eigen::Vector2d center, double radius);
  static Predicate outside_disk(Eigen::Vector2d center, double radius);

  double margin(const Vec& x) const;
  /// Records l(x) on x's tape. Box minima use soft-min with temperature k.
  diffgraph::Var record(diffgraph::Var x, double k) const;
};

using PredicateTable = std::map<std::string, Predicate, std::less<>>;

enum class Kind { kTrue, kPredicate, kNot, kAnd, kOr, kUntil, kEventually, kAlways };

struct FormulaNode;

/// Immutable STL formula; copies share structure.
class Formula {
 public:
  Formula() = default;

  static Formula truth();
  static Formula predicate(std::string name, Predicate p);
  static Formula negation(Formula f);
  static Formula conjunction(std::vector<Formula> children);
  static Formula disjunction(std::vector<Formula> children);
  static Formula until(Formula lhs, Interval i, Formula rhs);
  static Formula eventually(Interval i, Formula f);
  static Formula always(Interval i, Formula f);

  bool empty() const { return node_ == nullptr; }
  Kind kind() const;
  const std::vector<Formula>& children() const;
  Interval interval() const;
  const std::string& name() const;
  const Predicate& pred() const;
  const FormulaNode* id() const { return node_.get(); }

  /// Structural equality (predicate names, not payloads, are compared).
  friend bool operator==(const Formula& x, const Formula& y);

 private:
  explicit Formula(std::shared_ptr<const FormulaNode> n) : node_(std::move(n)) {}
  std::shared_ptr<const FormulaNode> node_;
};

struct FormulaNode {
  Kind kind = Kind::kTrue;
  std::vector<Formula> children;
  Interval interval;
  std::string name;
  Predicate predicate;
};

/// Parses the formula grammar documented in docs/grammar.md. Identifiers must
/// be bound in `predicates`.
Formula parse_formula(std::string_view text, const PredicateTable& predicates);

/// Canonical text form; parse_formula(to_string(f)) == f.
std::string to_string(const Formula& f);

int horizon(const Formula& f);

/// Classical robustness at time t over states[0..]. Needs t + hrz + 1 states.
double robustness_classic(const Formula& f, std::span<const Vec> states, int t = 0);

/// Smooth robustness recorded on the tape that owns `states`.
diffgraph::Var robustness_smooth(const Formula& f, std::span<const diffgraph::Var> states, double k,
                                 int t = 0);

struct RobustnessResult {
  double value = 0.0;
  /// Row t is d rho / d x_t; empty for classical results.
  Eigen::MatrixXd gradient;
};

/// Smooth robustness at time 0 and its gradient with respect to every state.
RobustnessResult robustness_gradient(const Formula& f, std::span<const Vec> states, double k);

/// Temperature used by training unless configured otherwise.
inline constexpr double kDefaultTemperature = 10.0;

/// Robustness of the constant true formula under both semantics.
inline constexpr double kTrueRobustness = 1e9;

}  // namespace stlseeker::stl
