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

#include "stlseeker/world.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include <boost/algorithm/string.hpp>

namespace stlseeker::world {
namespace {

constexpr double kStraightLimit = 1e-6;
constexpr double kBoxTolerance = 1e-12;

void check_control(const Vec& u, const Box& box) {
  if (!box.contains(u, kBoxTolerance)) {
    throw ControlRangeError("control (" + format_double(u[0]) + ", " + format_double(u[1]) +
                            ") is outside the control box");
  }
}

Eigen::Vector2d position(const Vec& x) { return {x[0], x[1]}; }

}  // namespace

std::string to_string(PlantKind kind) { return kind == PlantKind::kUnicycle ? "unicycle" : "integrator"; }

PlantKind plant_kind_from_string(const std::string& text) {
  if (text == "unicycle") return PlantKind::kUnicycle;
  if (text == "integrator") return PlantKind::kIntegrator;
  throw std::invalid_argument("unknown plant kind '" + text + "'");
}

Region Region::box(std::string name, Eigen::Vector2d lo, Eigen::Vector2d hi, Polarity polarity) {
  if ((hi.array() < lo.array()).any()) throw std::invalid_argument("region '" + name + "' has unordered corners");
  Region r;
  r.name = std::move(name);
  r.shape = RegionShape::kBox;
  r.polarity = polarity;
  r.lo = lo;
  r.hi = hi;
  r.center = 0.5 * (lo + hi);
  return r;
}

Region Region::disk(std::string name, Eigen::Vector2d center, double radius, Polarity polarity) {
  if (!(radius > 0.0)) throw std::invalid_argument("region '" + name + "' needs a positive radius");
  Region r;
  r.name = std::move(name);
  r.shape = RegionShape::kDisk;
  r.polarity = polarity;
  r.center = center;
  r.radius = radius;
  return r;
}

stl::Predicate Region::inside() const {
  return shape == RegionShape::kBox ? stl::Predicate::inside_box(lo, hi) : stl::Predicate::inside_disk(center, radius);
}

double Region::signed_distance(const Eigen::Vector2d& p) const {
  if (shape == RegionShape::kDisk) return (p - center).norm() - radius;
  const Eigen::Vector2d q = (p - center).cwiseAbs() - 0.5 * (hi - lo);
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

stl::PredicateTable PlantConfig::predicates() const {
  stl::PredicateTable table;
  for (const Region& r : regions) table.emplace(r.name, r.inside());
  return table;
}

void PlantConfig::validate() const {
  if (control_box.dim() != control_dim()) throw std::invalid_argument("control box must be two-dimensional");
  if (noise_box.dim() != state_dim()) throw std::invalid_argument("noise box must match the state dimension");
  if (initial_box.dim() != state_dim()) throw std::invalid_argument("initial box must match the state dimension");
  if (!(noise_box.lo + noise_box.hi).isZero(1e-12)) throw std::invalid_argument("noise box must be symmetric about zero");
  if (stop_distance < 0.0) throw std::invalid_argument("stop distance must be non-negative");
}

Vec unicycle_step(const Vec& x, const Vec& u, const Box& control_box) {
  if (x.size() != 3 || u.size() != 2) throw std::invalid_argument("unicycle expects x in R^3 and u in R^2");
  check_control(u, control_box);
  const double th = x[2];
  const double v = u[0];
  const double w = u[1];
  Vec next = x;
  if (std::abs(w) < kStraightLimit) {
    next[0] += v * std::cos(th);
    next[1] += v * std::sin(th);
  } else {
    next[0] += v / w * (std::sin(th + w) - std::sin(th));
    next[1] += v / w * (std::cos(th) - std::cos(th + w));
  }
  next[2] += w;
  return next;
}

Vec integrator_step(const Vec& x, const Vec& u, const Box& control_box) {
  if (x.size() != 2 || u.size() != 2) throw std::invalid_argument("integrator expects x and u in R^2");
  check_control(u, control_box);
  return x + u;
}

Vec plant_step(const PlantConfig& plant, const Vec& x, const Vec& u) {
  return plant.kind == PlantKind::kUnicycle ? unicycle_step(x, u, plant.control_box)
                                            : integrator_step(x, u, plant.control_box);
}

Vec observe(const Vec& x, const Box& noise_box, Rng& rng) { return x + noise_box.sample(rng); }

Vec sample_initial(const Box& initial_box, Rng& rng) { return initial_box.sample(rng); }

double distance_to_unsafe(const Vec& x, const std::vector<Region>& regions) {
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Vector2d p = position(x);
  for (const Region& r : regions) {
    if (r.polarity == Polarity::kObstacle) best = std::min(best, r.signed_distance(p));
    if (r.polarity == Polarity::kSafeInterior) best = std::min(best, -r.signed_distance(p));
  }
  return best;
}

void Trajectory::check() const {
  if (states.empty()) throw std::logic_error("trajectory has no states");
  if (states.size() != controls.size() + 1) throw std::logic_error("trajectory needs one more state than controls");
  if (!log.empty() && log.size() != controls.size()) throw std::logic_error("step log length mismatch");
  if (!observed.empty() && observed.size() != states.size()) throw std::logic_error("observation count mismatch");
  if (stopped && stop_index != steps()) throw std::logic_error("stop index does not match the recorded length");
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, PlantKind kind) {
  traj.check();
  const bool unicycle = kind == PlantKind::kUnicycle;
  out << "t,px,py" << (unicycle ? ",theta" : "") << ",u1,u2,filtered,stopped,raw_u1,raw_u2,slack,status\n";
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const Vec& x = traj.states[t];
    out << t << ',' << format_double(x[0]) << ',' << format_double(x[1]);
    if (unicycle) out << ',' << format_double(x[2]);
    const bool last = t == traj.controls.size();
    const int stopped = traj.stopped && last ? 1 : 0;
    if (last) {
      out << ",,,0," << stopped << ",,,,\n";
      continue;
    }
    const Vec& u = traj.controls[t];
    out << ',' << format_double(u[0]) << ',' << format_double(u[1]);
    if (t < traj.log.size()) {
      const StepLog& s = traj.log[t];
      out << ',' << (s.filtered ? 1 : 0) << ',' << stopped << ',' << format_double(s.raw_control[0]) << ','
          << format_double(s.raw_control[1]) << ',' << (std::isnan(s.slack) ? "" : format_double(s.slack)) << ','
          << s.status << '\n';
    } else {
      out << ",0," << stopped << ",,,,raw\n";
    }
  }
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trajectory file");
  std::vector<std::string> header;
  boost::split(header, line, boost::is_any_of(","));
  const bool unicycle = header.size() > 3 && header[3] == "theta";
  const std::size_t n = unicycle ? 3 : 2;
  const std::size_t expected = n + 9;
  if (header.size() != expected) throw std::runtime_error("unexpected trajectory header '" + line + "'");
  auto number = [](const std::string& s) { return std::stod(s); };

  Trajectory traj;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    boost::split(cells, line, boost::is_any_of(","));
    if (cells.size() != expected) throw std::runtime_error("malformed trajectory row '" + line + "'");
    Vec x(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(i)] = number(cells[1 + i]);
    traj.states.push_back(x);
    const std::size_t c = 1 + n;
    if (cells[c + 3] == "1") traj.stopped = true;
    if (cells[c].empty()) continue;
    traj.controls.push_back(Eigen::Vector2d(number(cells[c]), number(cells[c + 1])));
    StepLog s;
    s.filtered = cells[c + 2] == "1";
    s.raw_control = cells[c + 4].empty() ? traj.controls.back()
                                         : Vec(Eigen::Vector2d(number(cells[c + 4]), number(cells[c + 5])));
    if (!cells[c + 6].empty()) s.slack = number(cells[c + 6]);
    s.status = cells[c + 7];
    traj.log.push_back(std::move(s));
  }
  if (traj.stopped) traj.stop_index = traj.steps();
  traj.check();
  return traj;
}

}  // namespace stlseeker::world
