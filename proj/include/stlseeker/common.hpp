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

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace stlseeker {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec l, Vec h);

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& v, double tol = 0.0) const;
  Vec clamp(const Vec& v) const;
  Vec center() const { return 0.5 * (lo + hi); }
  Vec sample(Rng& rng) const;
};

/// Independent stream for item `index` of a seeded batch; the result does not
/// depend on how the batch is scheduled.
Rng derive_rng(std::uint64_t seed, std::uint64_t index);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Runs body(0..count-1) on up to `threads` workers. Each index must write
/// only its own outputs, so results do not depend on scheduling.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

/// STLSEEKER_THREADS when set to a positive integer, else the hardware
/// concurrency (at least 1).
int default_threads();

}  // namespace stlseeker
