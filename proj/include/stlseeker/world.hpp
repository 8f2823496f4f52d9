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

// Ground-truth plants standing in for the real system, region geometry, and
// the trajectory record shared by data collection, evaluation and export.

#pragma once

#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stlseeker/common.hpp"
#include "stlseeker/stl.hpp"

namespace stlseeker::world {

/// The plant was asked to apply a control outside its box.
class ControlRangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PlantKind { kUnicycle, kIntegrator };

std::string to_string(PlantKind kind);
PlantKind plant_kind_from_string(const std::string& text);

enum class RegionShape { kBox, kDisk };
enum class Polarity { kTarget, kObstacle, kSafeInterior };

struct Region {
  std::string name;
  RegionShape shape = RegionShape::kBox;
  Polarity polarity = Polarity::kTarget;
  Eigen::Vector2d lo = Eigen::Vector2d::Zero();
  Eigen::Vector2d hi = Eigen::Vector2d::Zero();
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.0;

  static Region box(std::string name, Eigen::Vector2d lo, Eigen::Vector2d hi, Polarity polarity = Polarity::kTarget);
  static Region disk(std::string name, Eigen::Vector2d center, double radius, Polarity polarity = Polarity::kTarget);

  /// "Inside the region" as an STL predicate over the position coordinates.
  stl::Predicate inside() const;
  /// Signed Euclidean distance to the boundary, negative inside.
  double signed_distance(const Eigen::Vector2d& p) const;
  bool unsafe() const { return polarity != Polarity::kTarget; }
};

struct PlantConfig {
  PlantKind kind = PlantKind::kUnicycle;
  Box control_box;
  Box noise_box;
  Box initial_box;
  std::vector<Region> regions;
  double stop_distance = 0.0;

  int state_dim() const { return kind == PlantKind::kUnicycle ? 3 : 2; }
  int control_dim() const { return 2; }
  /// Region table as STL predicates, keyed by region name.
  stl::PredicateTable predicates() const;
  void validate() const;
};

/// Exact unicycle update; |omega| < 1e-6 uses the straight-line limit.
Vec unicycle_step(const Vec& x, const Vec& u, const Box& control_box);
Vec integrator_step(const Vec& x, const Vec& u, const Box& control_box);
Vec plant_step(const PlantConfig& plant, const Vec& x, const Vec& u);

/// x + w with w uniform over the noise box.
Vec observe(const Vec& x, const Box& noise_box, Rng& rng);
Vec sample_initial(const Box& initial_box, Rng& rng);

/// Smallest signed distance from the position to any unsafe region boundary.
/// Obstacles count negative inside; safe regions count negative outside.
double distance_to_unsafe(const Vec& x, const std::vector<Region>& regions);

struct StepLog {
  Vec raw_control;
  bool filtered = false;
  double slack = std::numeric_limits<double>::quiet_NaN();
  std::string status = "raw";
};

/// States x_0..x_T (true plant states), controls u_0..u_{T-1}, and per-step
/// filter records. `observed` holds what the controller saw, when recorded.
struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> observed;
  std::vector<Vec> controls;
  std::vector<StepLog> log;
  bool stopped = false;
  int stop_index = -1;

  int steps() const { return static_cast<int>(controls.size()); }
  /// Throws std::logic_error when the bookkeeping invariants are broken.
  void check() const;
};

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, PlantKind kind);
Trajectory read_trajectory_csv(std::istream& in);

}  // namespace stlseeker::world
