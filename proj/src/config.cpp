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

#include "stlseeker/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace stlseeker::orchestrator {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment",
       {"name", "seed", "formula", "horizon", "n0", "n", "max_cycles", "eval_count", "fast_eval_count",
        "target_success"}},
      {"plant", {"kind", "control_lo", "control_hi", "noise", "initial_lo", "initial_hi", "stop_distance"}},
      {"barrier", {"enabled", "region", "kind", "center", "radius", "alpha", "weights", "margin"}},
      {"model",
       {"hidden", "periodic_inputs", "dropout", "epochs_initial", "epochs_refit", "batch", "lr", "sigma_inputs",
        "sigma_masks"}},
      {"policy",
       {"kind", "hidden", "samples", "lr", "temperature", "window", "tolerance", "max_steps", "min_steps",
        "divergence_margin", "patience"}},
  };
  return keys;
}

std::vector<std::string> tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string trimmed = boost::algorithm::trim_copy(text);
  if (trimmed.empty()) return out;
  boost::algorithm::split(out, trimmed, boost::algorithm::is_any_of(", \t"), boost::algorithm::token_compress_on);
  return out;
}

// Plain numbers, or multiples of pi written as "pi", "-pi/2", "0.5*pi".
double parse_number(const std::string& token, const std::string& where) {
  try {
    std::string t = token;
    double sign = 1.0;
    if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
      if (t[0] == '-') sign = -1.0;
      t = t.substr(1);
    }
    const auto pi_at = t.find("pi");
    if (pi_at == std::string::npos) {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(token);
      return sign * v;
    }
    double factor = 1.0;
    if (pi_at > 0) {
      if (t[pi_at - 1] != '*') throw std::invalid_argument(token);
      factor = std::stod(t.substr(0, pi_at - 1));
    }
    double divisor = 1.0;
    const std::string rest = t.substr(pi_at + 2);
    if (!rest.empty()) {
      if (rest[0] != '/') throw std::invalid_argument(token);
      divisor = std::stod(rest.substr(1));
    }
    return sign * factor * M_PI / divisor;
  } catch (const std::exception&) {
    throw ConfigError(where + ": not a number: '" + token + "'");
  }
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  bool has(const std::string& path) const { return tree_.get_optional<std::string>(pt::ptree::path_type(path, '.')).has_value(); }

  std::string text(const std::string& path) const {
    auto v = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!v) throw ConfigError("missing required key '" + path + "'");
    return boost::algorithm::trim_copy(*v);
  }

  std::string text_or(const std::string& path, const std::string& fallback) const {
    return has(path) ? text(path) : fallback;
  }

  double number(const std::string& path, double fallback) const {
    return has(path) ? parse_number(text(path), path) : fallback;
  }

  double number(const std::string& path) const { return parse_number(text(path), path); }

  int integer(const std::string& path, int fallback) const {
    if (!has(path)) return fallback;
    const double v = number(path);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError(path + ": expected an integer");
    return static_cast<int>(v);
  }

  Vec vector(const std::string& path) const {
    const auto parts = tokens(text(path));
    Vec v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_number(parts[i], path);
    if (v.size() == 0) throw ConfigError(path + ": empty list");
    return v;
  }

  std::vector<int> widths(const std::string& path, std::vector<int> fallback) const {
    if (!has(path)) return fallback;
    const Vec v = vector(path);
    std::vector<int> out;
    for (double x : v) {
      if (x != std::floor(x) || x < 1) throw ConfigError(path + ": layer widths must be positive integers");
      out.push_back(static_cast<int>(x));
    }
    return out;
  }

  // Non-negative integers, or "none".
  std::vector<int> indices(const std::string& path, std::vector<int> fallback) const {
    if (!has(path)) return fallback;
    if (boost::algorithm::to_lower_copy(text(path)) == "none") return {};
    std::vector<int> out;
    for (double x : vector(path)) {
      if (x != std::floor(x) || x < 0) throw ConfigError(path + ": indices must be non-negative integers");
      out.push_back(static_cast<int>(x));
    }
    return out;
  }

  bool flag(const std::string& path, bool fallback) const {
    if (!has(path)) return fallback;
    const std::string v = boost::algorithm::to_lower_copy(text(path));
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw ConfigError(path + ": expected a boolean");
  }

 private:
  const pt::ptree& tree_;
};

world::Polarity parse_polarity(const std::string& text, const std::string& where) {
  if (text == "target") return world::Polarity::kTarget;
  if (text == "obstacle") return world::Polarity::kObstacle;
  if (text == "safe") return world::Polarity::kSafeInterior;
  throw ConfigError(where + ": polarity must be target, obstacle or safe");
}

// NAME = box lo_x lo_y hi_x hi_y [polarity]  |  NAME = disk c_x c_y r [polarity]
world::Region parse_region(const std::string& name, const std::string& value) {
  const std::string where = "regions." + name;
  const auto parts = tokens(value);
  if (parts.empty()) throw ConfigError(where + ": empty region");
  const std::string& shape = parts[0];
  const std::size_t numbers = shape == "box" ? 4 : (shape == "disk" ? 3 : 0);
  if (numbers == 0) throw ConfigError(where + ": shape must be box or disk");
  if (parts.size() != numbers + 1 && parts.size() != numbers + 2) {
    throw ConfigError(where + ": expected " + std::to_string(numbers) + " numbers and an optional polarity");
  }
  std::vector<double> v;
  for (std::size_t i = 1; i <= numbers; ++i) v.push_back(parse_number(parts[i], where));
  const world::Polarity polarity =
      parts.size() == numbers + 2 ? parse_polarity(parts.back(), where) : world::Polarity::kTarget;
  try {
    if (shape == "box") return world::Region::box(name, {v[0], v[1]}, {v[2], v[3]}, polarity);
    return world::Region::disk(name, {v[0], v[1]}, v[2], polarity);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    if (section == "regions") continue;
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError("unknown section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("key '" + section + "' outside of a section");
    for (const auto& [key, value] : body) {
      if (!it->second.contains(key)) throw ConfigError("unknown key '" + section + "." + key + "'");
    }
  }
}

void apply_override(pt::ptree& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  const std::string key = boost::algorithm::trim_copy(assignment.substr(0, eq));
  const std::string value = boost::algorithm::trim_copy(assignment.substr(eq + 1));
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() || key.find('.', dot + 1) != std::string::npos) {
    throw ConfigError("override key '" + key + "' must be section.key");
  }
  tree.put(pt::ptree::path_type(key, '.'), value);
}

Box box_from(const Reader& r, const std::string& lo, const std::string& hi) {
  try {
    return Box(r.vector(lo), r.vector(hi));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(lo + "/" + hi + ": " + e.what());
  }
}

ExperimentConfig interpret(const pt::ptree& tree) {
  check_keys(tree);
  const Reader r(tree);
  ExperimentConfig c;
  c.name = r.text_or("experiment.name", c.name);
  const double seed = r.number("experiment.seed", 1.0);
  if (seed < 0 || seed != std::floor(seed)) throw ConfigError("experiment.seed must be a non-negative integer");
  c.seed = static_cast<std::uint64_t>(seed);
  c.formula_text = r.text("experiment.formula");
  c.horizon = r.integer("experiment.horizon", 0);
  c.n0 = r.integer("experiment.n0", c.n0);
  c.n = r.integer("experiment.n", c.n);
  c.max_cycles = r.integer("experiment.max_cycles", c.max_cycles);
  c.eval_count = r.integer("experiment.eval_count", c.eval_count);
  c.fast_eval_count = r.integer("experiment.fast_eval_count", c.fast_eval_count);
  c.target_success = r.number("experiment.target_success", c.target_success);

  try {
    c.plant.kind = world::plant_kind_from_string(r.text("plant.kind"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("plant.kind: ") + e.what());
  }
  c.plant.control_box = box_from(r, "plant.control_lo", "plant.control_hi");
  const Vec noise = r.vector("plant.noise");
  const int n = c.plant.state_dim();
  const Vec half = noise.size() == 1 ? Vec::Constant(n, noise[0]) : noise;
  if (half.size() != n || (half.array() < 0.0).any()) {
    throw ConfigError("plant.noise: give one non-negative half-width or one per state coordinate");
  }
  c.plant.noise_box = Box(-half, half);
  c.plant.initial_box = box_from(r, "plant.initial_lo", "plant.initial_hi");
  c.plant.stop_distance = r.number("plant.stop_distance", 0.0);
  if (auto regions = tree.get_child_optional("regions")) {
    for (const auto& [name, value] : *regions) c.plant.regions.push_back(parse_region(name, value.data()));
  }

  c.barrier_enabled = r.flag("barrier.enabled", true);
  if (c.barrier_enabled) {
    safety::BarrierSpec b;
    if (r.has("barrier.region")) {
      const std::string name = r.text("barrier.region");
      const world::Region* region = nullptr;
      for (const auto& reg : c.plant.regions) {
        if (reg.name == name) region = &reg;
      }
      if (region == nullptr) throw ConfigError("barrier.region: no region named '" + name + "'");
      if (region->shape != world::RegionShape::kDisk || !region->unsafe()) {
        throw ConfigError("barrier.region: must be an obstacle or safe disk");
      }
      b.kind = region->polarity == world::Polarity::kObstacle ? safety::BarrierKind::kOutsideDisk
                                                                : safety::BarrierKind::kInsideDisk;
      b.center = region->center;
      b.radius = region->radius;
    } else {
      const std::string kind = r.text("barrier.kind");
      if (kind == "outside_disk") {
        b.kind = safety::BarrierKind::kOutsideDisk;
      } else if (kind == "inside_disk") {
        b.kind = safety::BarrierKind::kInsideDisk;
      } else {
        throw ConfigError("barrier.kind must be outside_disk or inside_disk");
      }
      const Vec center = r.vector("barrier.center");
      if (center.size() != 2) throw ConfigError("barrier.center needs two coordinates");
      b.center = center;
      b.radius = r.number("barrier.radius");
    }
    b.alpha = r.number("barrier.alpha");
    b.weights = r.has("barrier.weights") ? r.vector("barrier.weights") : Vec::Ones(c.plant.control_dim());
    b.margin = r.number("barrier.margin", b.margin);
    try {
      b.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("barrier: ") + e.what());
    }
    c.barrier = b;
  }

  c.model.hidden = r.widths("model.hidden", c.model.hidden);
  c.model.periodic_inputs = r.indices("model.periodic_inputs", c.model.periodic_inputs);
  c.model.dropout = r.number("model.dropout", c.model.dropout);
  c.model.epochs_initial = r.integer("model.epochs_initial", c.model.epochs_initial);
  c.model.epochs_refit = r.integer("model.epochs_refit", c.model.epochs_refit);
  c.model.batch = r.integer("model.batch", c.model.batch);
  c.model.lr = r.number("model.lr", c.model.lr);
  c.model.sigma_inputs = r.integer("model.sigma_inputs", c.model.sigma_inputs);
  c.model.sigma_masks = r.integer("model.sigma_masks", c.model.sigma_masks);

  const std::string kind = r.text_or("policy.kind", "recurrent");
  if (kind == "recurrent") {
    c.policy.kind = nets::PolicyKind::kRecurrent;
  } else if (kind == "feedforward") {
    c.policy.kind = nets::PolicyKind::kFeedforward;
  } else {
    throw ConfigError("policy.kind must be recurrent or feedforward");
  }
  c.policy.hidden = r.widths("policy.hidden", c.policy.hidden);
  auto& im = c.policy.improve;
  im.samples = r.integer("policy.samples", im.samples);
  im.lr = r.number("policy.lr", im.lr);
  im.k = r.number("policy.temperature", im.k);
  im.window = r.integer("policy.window", im.window);
  im.tolerance = r.number("policy.tolerance", im.tolerance);
  im.max_steps = r.integer("policy.max_steps", im.max_steps);
  im.min_steps = r.integer("policy.min_steps", im.min_steps);
  im.divergence_margin = r.number("policy.divergence_margin", im.divergence_margin);
  im.patience = r.integer("policy.patience", im.patience);
  return c;
}

}  // namespace

stl::Formula ExperimentConfig::formula() const {
  try {
    return stl::parse_formula(formula_text, plant.predicates());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("experiment.formula: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  try {
    plant.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("plant: ") + e.what());
  }
  const int hrz = stl::horizon(formula());
  if (horizon == 0) throw ConfigError("experiment.horizon is required");
  if (horizon != hrz) {
    throw ConfigError("experiment.horizon must equal the formula horizon " + std::to_string(hrz));
  }
  if (n0 < 1 || n < 1 || max_cycles < 1 || eval_count < 1 || fast_eval_count < 1) {
    throw ConfigError("episode, cycle and evaluation counts must be positive");
  }
  if (!(target_success > 0.0 && target_success <= 1.0)) throw ConfigError("target_success must lie in (0, 1]");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  for (int i : model.periodic_inputs) {
    if (i >= plant.state_dim()) throw ConfigError("model.periodic_inputs: index " + std::to_string(i) + " is not a state");
  }
  if (model.epochs_initial < 1 || model.epochs_refit < 0 || model.batch < 1 || !(model.lr > 0.0)) {
    throw ConfigError("model training settings must be positive");
  }
  if (model.sigma_inputs < 1 || model.sigma_masks < 2) throw ConfigError("sigma estimation needs inputs and >= 2 masks");
  const auto& im = policy.improve;
  if (im.samples < 1 || im.window < 1 || im.max_steps < 1 || im.min_steps < 0 || im.patience < 1 ||
      !(im.lr > 0.0) || !(im.k > 0.0)) {
    throw ConfigError("policy optimization settings must be positive");
  }
  if (barrier_enabled) {
    if (barrier.weights.size() != plant.control_dim()) throw ConfigError("barrier.weights needs one weight per control");
    const int n = plant.state_dim();
    if (barrier.px_index >= n || barrier.py_index >= n) throw ConfigError("barrier indexes exceed the state");
  }
}

ExperimentConfig parse_config(std::istream& in, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const std::string& o : overrides) apply_override(tree, o);
  ExperimentConfig c = interpret(tree);
  std::ostringstream effective;
  pt::write_ini(effective, tree);
  c.source = effective.str();
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  std::istringstream in(text);
  return parse_config(in, overrides);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in, overrides);
}

}  // namespace stlseeker::orchestrator
