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

// Experiment configuration: an INI file with one section per concern.
// The schema is documented in docs/config.md.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "stlseeker/nets.hpp"
#include "stlseeker/policy_opt.hpp"
#include "stlseeker/safety.hpp"
#include "stlseeker/stl.hpp"
#include "stlseeker/world.hpp"

namespace stlseeker::orchestrator {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSettings {
  std::vector<int> hidden{32, 32};
  std::vector<int> periodic_inputs;  // state indices encoded as (sin, cos)
  double dropout = 0.1;
  int epochs_initial = 500;
  int epochs_refit = 200;
  int batch = 64;
  double lr = 1e-3;
  int sigma_inputs = 100;
  int sigma_masks = 50;
};

struct PolicySettings {
  nets::PolicyKind kind = nets::PolicyKind::kRecurrent;
  std::vector<int> hidden{32, 32};
  policy_opt::ImproveOptions improve;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string formula_text;
  int horizon = 0;
  int n0 = 10;
  int n = 3;
  int max_cycles = 10;
  int eval_count = 1000;
  int fast_eval_count = 200;
  double target_success = 0.99;

  world::PlantConfig plant;
  bool barrier_enabled = true;
  safety::BarrierSpec barrier;
  ModelSettings model;
  PolicySettings policy;

  /// The effective INI text after overrides; stored with checkpoints.
  std::string source;

  stl::Formula formula() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// `overrides` are "section.key=value" strings applied before interpretation.
ExperimentConfig parse_config(std::istream& in, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

}  // namespace stlseeker::orchestrator
