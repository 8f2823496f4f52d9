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

// Static SVG plots: the workspace with region outlines and trajectory
// paths, and the training robustness curve.

#pragma once

#include <string>
#include <vector>

#include "stlseeker/orchestrator.hpp"
#include "stlseeker/world.hpp"

namespace stlseeker::svg {

/// Regions of `plant` with the position paths of `trajs` drawn on top.
/// Paths listed in `highlight` (by index) are drawn in red.
std::string trajectories(const world::PlantConfig& plant, const std::vector<world::Trajectory>& trajs,
                         const std::string& title, const std::vector<bool>& highlight = {});

/// Average smooth robustness per optimizer step, with dashed vertical lines
/// where the model was retrained.
std::string robustness_curve(const std::vector<orchestrator::TraceRow>& trace, const std::string& title);

}  // namespace stlseeker::svg
