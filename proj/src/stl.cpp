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

#include "stlseeker/stl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <unordered_map>
#include <utility>

namespace stlseeker::stl {

using diffgraph::Tape;
using diffgraph::Var;

// ---------------------------------------------------------------------------
// Predicates

Predicate Predicate::affine(Vec normal, double offset) {
  Predicate p;
  p.kind = PredicateKind::kAffine;
  p.normal = std::move(normal);
  p.offset = offset;
  return p;
}

Predicate Predicate::inside_box(Eigen::Vector2d lo, Eigen::Vector2d hi) {
  if ((hi.array() < lo.array()).any()) throw std::invalid_argument("box corners are not ordered");
  Predicate p;
  p.kind = PredicateKind::kInsideBox;
  p.lo = lo;
  p.hi = hi;
  return p;
}

Predicate Predicate::inside_disk(Eigen::Vector2d center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("disk radius must be positive");
  Predicate p;
  p.kind = PredicateKind::kInsideDisk;
  p.center = center;
  p.radius = radius;
  return p;
}

Predicate Predicate::outside_disk(Eigen::Vector2d center, double radius) {
  Predicate p = inside_disk(center, radius);
  p.kind = PredicateKind::kOutsideDisk;
  return p;
}

double Predicate::margin(const Vec& x) const {
  switch (kind) {
    case PredicateKind::kAffine:
      if (normal.size() != x.size()) throw RobustnessError("affine predicate dimension mismatch");
      return normal.dot(x) - offset;
    case PredicateKind::kInsideBox: {
      const double px = x[px_index];
      const double py = x[py_index];
      return std::min({px - lo.x(), hi.x() - px, py - lo.y(), hi.y() - py});
    }
    case PredicateKind::kInsideDisk:
    case PredicateKind::kOutsideDisk: {
      const Eigen::Vector2d p(x[px_index], x[py_index]);
      const double d2 = (p - center).squaredNorm();
      const double inside = radius * radius - d2;
      return kind == PredicateKind::kInsideDisk ? inside : -inside;
    }
  }
  return 0.0;
}

Var Predicate::record(Var x, double k) const {
  Tape& tape = *x.tape;
  const auto n = static_cast<Eigen::Index>(x.size());
  switch (kind) {
    case PredicateKind::kAffine: {
      if (normal.size() != n) throw RobustnessError("affine predicate dimension mismatch");
      Vec params(n + 1);
      params.head(n) = normal;
      params[n] = -offset;
      return tape.affine(tape.constant(params), 0, 1, static_cast<std::size_t>(n), x);
    }
    case PredicateKind::kInsideBox: {
      // Rows select +px, -px, +py, -py; the bias carries the box edges.
      Vec params = Vec::Zero(4 * n + 4);
      params[0 * n + px_index] = 1.0;
      params[1 * n + px_index] = -1.0;
      params[2 * n + py_index] = 1.0;
      params[3 * n + py_index] = -1.0;
      params.tail(4) << -lo.x(), hi.x(), -lo.y(), hi.y();
      Var margins = tape.affine(tape.constant(params), 0, 4, static_cast<std::size_t>(n), x);
      return tape.soft_min(margins, k);
    }
    case PredicateKind::kInsideDisk:
    case PredicateKind::kOutsideDisk: {
      Vec params = Vec::Zero(2 * n + 2);
      params[0 * n + px_index] = 1.0;
      params[1 * n + py_index] = 1.0;
      params.tail(2) = -center;
      Var d = tape.affine(tape.constant(params), 0, 2, static_cast<std::size_t>(n), x);
      Var d2 = tape.sum(tape.mul(d, d));
      Var r2 = tape.constant(radius * radius);
      return kind == PredicateKind::kInsideDisk ? tape.sub(r2, d2) : tape.sub(d2, r2);
    }
  }
  throw RobustnessError("unknown predicate kind");
}

// ---------------------------------------------------------------------------
// Formula

Formula Formula::truth() {
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kTrue;
  return Formula(std::move(n));
}

Formula Formula::predicate(std::string name, Predicate p) {
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kPredicate;
  n->name = std::move(name);
  n->predicate = std::move(p);
  return Formula(std::move(n));
}

Formula Formula::negation(Formula f) {
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kNot;
  n->children.push_back(std::move(f));
  return Formula(std::move(n));
}

Formula Formula::conjunction(std::vector<Formula> children) {
  if (children.empty()) throw std::invalid_argument("conjunction needs operands");
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kAnd;
  n->children = std::move(children);
  return Formula(std::move(n));
}

Formula Formula::disjunction(std::vector<Formula> children) {
  if (children.empty()) throw std::invalid_argument("disjunction needs operands");
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kOr;
  n->children = std::move(children);
  return Formula(std::move(n));
}

namespace {
void validate(Interval i) {
  if (i.a < 0 || i.b < i.a) {
    throw std::invalid_argument("malformed interval [" + std::to_string(i.a) + "," + std::to_string(i.b) + "]");
  }
}
}  // namespace

Formula Formula::until(Formula lhs, Interval i, Formula rhs) {
  validate(i);
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kUntil;
  n->interval = i;
  n->children = {std::move(lhs), std::move(rhs)};
  return Formula(std::move(n));
}

Formula Formula::eventually(Interval i, Formula f) {
  validate(i);
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kEventually;
  n->interval = i;
  n->children.push_back(std::move(f));
  return Formula(std::move(n));
}

Formula Formula::always(Interval i, Formula f) {
  validate(i);
  auto n = std::make_shared<FormulaNode>();
  n->kind = Kind::kAlways;
  n->interval = i;
  n->children.push_back(std::move(f));
  return Formula(std::move(n));
}

Kind Formula::kind() const { return node_->kind; }
const std::vector<Formula>& Formula::children() const { return node_->children; }
Interval Formula::interval() const { return node_->interval; }
const std::string& Formula::name() const { return node_->name; }
const Predicate& Formula::pred() const { return node_->predicate; }

bool operator==(const Formula& x, const Formula& y) {
  if (x.node_ == y.node_) return true;
  if (x.empty() || y.empty()) return false;
  if (x.kind() != y.kind() || x.interval() != y.interval() || x.name() != y.name()) return false;
  return x.children() == y.children();
}

// ---------------------------------------------------------------------------
// Parser

namespace {

enum class Tok { kLParen, kRParen, kLBracket, kRBracket, kComma, kInt, kIdent, kEnd };

struct Token {
  Tok type = Tok::kEnd;
  std::string text;
  std::size_t pos = 0;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.pos = i;
    switch (c) {
      case '(': t.type = Tok::kLParen; break;
      case ')': t.type = Tok::kRParen; break;
      case '[': t.type = Tok::kLBracket; break;
      case ']': t.type = Tok::kRBracket; break;
      case ',': t.type = Tok::kComma; break;
      default: break;
    }
    if (t.type != Tok::kEnd) {
      t.text = std::string(1, c);
      out.push_back(t);
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      t.type = Tok::kInt;
      t.text = std::string(s.substr(i, j - i));
      out.push_back(t);
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      t.type = Tok::kIdent;
      t.text = std::string(s.substr(i, j - i));
      out.push_back(t);
      i = j;
      continue;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", i);
  }
  Token end;
  end.pos = s.size();
  out.push_back(end);
  return out;
}

bool is_keyword(const std::string& w) {
  return w == "G" || w == "F" || w == "U" || w == "and" || w == "or" || w == "not" || w == "true";
}

class Parser {
 public:
  Parser(std::string_view text, const PredicateTable& preds) : toks_(tokenize(text)), preds_(preds) {}

  Formula parse() {
    Formula f = parse_or();
    if (peek().type != Tok::kEnd) throw ParseError("unexpected '" + peek().text + "'", peek().pos);
    return f;
  }

 private:
  const Token& peek() const { return toks_[at_]; }
  bool peek_word(std::string_view w) const { return peek().type == Tok::kIdent && peek().text == w; }
  Token take() { return toks_[at_++]; }

  void expect(Tok type, std::string_view what) {
    if (peek().type != type) {
      throw ParseError("expected " + std::string(what) + (peek().type == Tok::kEnd ? " before end of input" : ""),
                       peek().pos);
    }
    ++at_;
  }

  Formula parse_or() {
    std::vector<Formula> parts{parse_and()};
    while (peek_word("or")) {
      take();
      parts.push_back(parse_and());
    }
    return parts.size() == 1 ? parts.front() : Formula::disjunction(std::move(parts));
  }

  Formula parse_and() {
    std::vector<Formula> parts{parse_until()};
    while (peek_word("and")) {
      take();
      parts.push_back(parse_until());
    }
    return parts.size() == 1 ? parts.front() : Formula::conjunction(std::move(parts));
  }

  Formula parse_until() {
    Formula lhs = parse_unary();
    if (peek_word("U")) {
      take();
      const Interval i = parse_interval();
      Formula rhs = parse_until();
      return Formula::until(std::move(lhs), i, std::move(rhs));
    }
    return lhs;
  }

  Formula parse_unary() {
    if (peek_word("not")) {
      take();
      return Formula::negation(parse_unary());
    }
    if (peek_word("G") || peek_word("F")) {
      const bool always = take().text == "G";
      const Interval i = parse_interval();
      Formula body = parse_unary();
      return always ? Formula::always(i, std::move(body)) : Formula::eventually(i, std::move(body));
    }
    return parse_primary();
  }

  Formula parse_primary() {
    const Token& t = peek();
    if (t.type == Tok::kLParen) {
      take();
      Formula f = parse_or();
      expect(Tok::kRParen, "')'");
      return f;
    }
    if (t.type == Tok::kIdent) {
      if (t.text == "true") {
        take();
        return Formula::truth();
      }
      if (is_keyword(t.text)) throw ParseError("unexpected keyword '" + t.text + "'", t.pos);
      auto it = preds_.find(t.text);
      if (it == preds_.end()) throw ParseError("unknown predicate '" + t.text + "'", t.pos);
      take();
      return Formula::predicate(it->first, it->second);
    }
    if (t.type == Tok::kEnd) throw ParseError("unexpected end of input", t.pos);
    throw ParseError("unexpected '" + t.text + "'", t.pos);
  }

  int parse_int() {
    const Token& t = peek();
    if (t.type != Tok::kInt) throw ParseError("expected integer", t.pos);
    int v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc{}) throw ParseError("integer out of range", t.pos);
    take();
    return v;
  }

  Interval parse_interval() {
    const std::size_t start = peek().pos;
    expect(Tok::kLBracket, "'['");
    Interval i;
    i.a = parse_int();
    expect(Tok::kComma, "','");
    i.b = parse_int();
    expect(Tok::kRBracket, "']'");
    if (i.a > i.b) {
      throw ParseError("malformed interval [" + std::to_string(i.a) + "," + std::to_string(i.b) + "]", start);
    }
    return i;
  }

  std::vector<Token> toks_;
  std::size_t at_ = 0;
  const PredicateTable& preds_;
};

}  // namespace

Formula parse_formula(std::string_view text, const PredicateTable& predicates) {
  return Parser(text, predicates).parse();
}

namespace {

std::string wrap(const Formula& f) {
  const Kind k = f.kind();
  const std::string s = to_string(f);
  return (k == Kind::kAnd || k == Kind::kOr || k == Kind::kUntil) ? "(" + s + ")" : s;
}

std::string interval_text(Interval i) { return "[" + std::to_string(i.a) + "," + std::to_string(i.b) + "]"; }

}  // namespace

std::string to_string(const Formula& f) {
  switch (f.kind()) {
    case Kind::kTrue: return "true";
    case Kind::kPredicate: return f.name();
    case Kind::kNot: return "not " + wrap(f.children()[0]);
    case Kind::kAnd:
    case Kind::kOr: {
      const std::string sep = f.kind() == Kind::kAnd ? " and " : " or ";
      std::string out;
      for (std::size_t i = 0; i < f.children().size(); ++i) {
        if (i > 0) out += sep;
        out += wrap(f.children()[i]);
      }
      return out;
    }
    case Kind::kUntil:
      return wrap(f.children()[0]) + " U" + interval_text(f.interval()) + " " + wrap(f.children()[1]);
    case Kind::kEventually: return "F" + interval_text(f.interval()) + " " + wrap(f.children()[0]);
    case Kind::kAlways: return "G" + interval_text(f.interval()) + " " + wrap(f.children()[0]);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Horizon and classical semantics

int horizon(const Formula& f) {
  switch (f.kind()) {
    case Kind::kTrue:
    case Kind::kPredicate: return 0;
    case Kind::kNot: return horizon(f.children()[0]);
    case Kind::kAnd:
    case Kind::kOr: {
      int h = 0;
      for (const Formula& c : f.children()) h = std::max(h, horizon(c));
      return h;
    }
    case Kind::kUntil:
      return f.interval().b + std::max(horizon(f.children()[0]), horizon(f.children()[1]));
    case Kind::kEventually:
    case Kind::kAlways: return f.interval().b + horizon(f.children()[0]);
  }
  return 0;
}

namespace {

double classic(const Formula& f, std::span<const Vec> xs, int t) {
  switch (f.kind()) {
    case Kind::kTrue: return kTrueRobustness;
    case Kind::kPredicate: return f.pred().margin(xs[static_cast<std::size_t>(t)]);
    case Kind::kNot: return -classic(f.children()[0], xs, t);
    case Kind::kAnd: {
      double r = std::numeric_limits<double>::infinity();
      for (const Formula& c : f.children()) r = std::min(r, classic(c, xs, t));
      return r;
    }
    case Kind::kOr: {
      double r = -std::numeric_limits<double>::infinity();
      for (const Formula& c : f.children()) r = std::max(r, classic(c, xs, t));
      return r;
    }
    case Kind::kEventually: {
      double r = -std::numeric_limits<double>::infinity();
      for (int s = t + f.interval().a; s <= t + f.interval().b; ++s) r = std::max(r, classic(f.children()[0], xs, s));
      return r;
    }
    case Kind::kAlways: {
      double r = std::numeric_limits<double>::infinity();
      for (int s = t + f.interval().a; s <= t + f.interval().b; ++s) r = std::min(r, classic(f.children()[0], xs, s));
      return r;
    }
    case Kind::kUntil: {
      double best = -std::numeric_limits<double>::infinity();
      for (int s = t + f.interval().a; s <= t + f.interval().b; ++s) {
        double r = classic(f.children()[1], xs, s);
        for (int p = t; p < s; ++p) r = std::min(r, classic(f.children()[0], xs, p));
        best = std::max(best, r);
      }
      return best;
    }
  }
  return 0.0;
}

void require_length(const Formula& f, std::size_t available, int t) {
  if (t < 0) throw RobustnessError("negative evaluation time");
  const std::size_t need = static_cast<std::size_t>(t + horizon(f) + 1);
  if (available < need) {
    throw RobustnessError("trajectory has " + std::to_string(available) + " states, formula needs " +
                          std::to_string(need));
  }
}

}  // namespace

double robustness_classic(const Formula& f, std::span<const Vec> states, int t) {
  require_length(f, states.size(), t);
  return classic(f, states, t);
}

// ---------------------------------------------------------------------------
// Smooth semantics

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<const FormulaNode*, int>& p) const {
    return std::hash<const void*>()(p.first) ^ (std::hash<int>()(p.second) * 0x9e3779b97f4a7c15ULL);
  }
};

class SmoothBuilder {
 public:
  SmoothBuilder(std::span<const Var> xs, double k) : xs_(xs), k_(k), tape_(*xs.front().tape) {}

  Var eval(const Formula& f, int t) {
    const auto key = std::make_pair(f.id(), t);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    Var v = build(f, t);
    memo_.emplace(key, v);
    return v;
  }

 private:
  Var reduce(std::vector<Var> parts, bool minimum) {
    if (parts.size() == 1) return parts.front();
    Var stacked = tape_.concat(parts);
    return minimum ? tape_.soft_min(stacked, k_) : tape_.soft_max(stacked, k_);
  }

  Var build(const Formula& f, int t) {
    switch (f.kind()) {
      case Kind::kTrue: return tape_.constant(kTrueRobustness);
      case Kind::kPredicate: return f.pred().record(xs_[static_cast<std::size_t>(t)], k_);
      case Kind::kNot: return tape_.neg(eval(f.children()[0], t));
      case Kind::kAnd:
      case Kind::kOr: {
        std::vector<Var> parts;
        for (const Formula& c : f.children()) parts.push_back(eval(c, t));
        return reduce(std::move(parts), f.kind() == Kind::kAnd);
      }
      case Kind::kEventually:
      case Kind::kAlways: {
        std::vector<Var> parts;
        for (int s = t + f.interval().a; s <= t + f.interval().b; ++s) parts.push_back(eval(f.children()[0], s));
        return reduce(std::move(parts), f.kind() == Kind::kAlways);
      }
      case Kind::kUntil: {
        std::vector<Var> outer;
        for (int s = t + f.interval().a; s <= t + f.interval().b; ++s) {
          std::vector<Var> inner{eval(f.children()[1], s)};
          for (int p = t; p < s; ++p) inner.push_back(eval(f.children()[0], p));
          outer.push_back(reduce(std::move(inner), true));
        }
        return reduce(std::move(outer), false);
      }
    }
    throw RobustnessError("unknown formula kind");
  }

  std::span<const Var> xs_;
  double k_;
  Tape& tape_;
  std::unordered_map<std::pair<const FormulaNode*, int>, Var, PairHash> memo_;
};

}  // namespace

Var robustness_smooth(const Formula& f, std::span<const Var> states, double k, int t) {
  if (!(k > 0.0)) throw RobustnessError("temperature must be positive");
  if (states.empty()) throw RobustnessError("no states");
  require_length(f, states.size(), t);
  return SmoothBuilder(states, k).eval(f, t);
}

RobustnessResult robustness_gradient(const Formula& f, std::span<const Vec> states, double k) {
  require_length(f, states.size(), 0);
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(states.size());
  for (std::size_t t = 0; t < states.size(); ++t) leaves.push_back(tape.leaf("x" + std::to_string(t), states[t]));
  Var rho = robustness_smooth(f, leaves, k);
  tape.zero_adjoints();
  tape.seed(rho, Vec::Ones(1));
  tape.propagate(0, tape.size());

  RobustnessResult out;
  out.value = rho.scalar();
  const auto n = states.empty() ? 0 : states.front().size();
  out.gradient = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states.size()), n);
  for (std::size_t t = 0; t < states.size(); ++t) {
    out.gradient.row(static_cast<Eigen::Index>(t)) = tape.adjoint(leaves[t]).transpose();
  }
  return out;
}

}  // namespace stlseeker::stl
