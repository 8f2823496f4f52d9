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

// The outer loop. Each cycle trains the dynamics net on all data, improves
// the policy on the learned model, evaluates it on the true plant with the
// safety filter active, and (unless done) runs N more filtered episodes to
// grow the dataset. State is checkpointed after every cycle; the checkpoint
// layout is documented in docs/checkpoint.md.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stlseeker/config.hpp"
#include "stlseeker/model_learning.hpp"
#include "stlseeker/nets.hpp"
#include "stlseeker/world.hpp"

namespace stlseeker::orchestrator {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class PlantKindMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr int kCheckpointVersion = 1;

struct CycleReport {
  int cycle = 0;
  std::size_t dataset_size = 0;  // records the model was trained on
  int episodes = 0;              // plant episodes run so far
  double model_loss = 0.0;       // last epoch mean loss
  int improve_steps = 0;
  bool improve_converged = false;
  bool improve_diverged = false;
  double first_smooth_rho = 0.0;
  double last_smooth_rho = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double mean_rho = 0.0;
  int eval_count = 0;
  int fallback_steps = 0;  // safety-filter fallbacks while collecting data
  double wall_seconds = 0.0;
  std::string status = "ok";
  std::string error;
};

nlohmann::json to_json(const CycleReport& r);
CycleReport cycle_report_from_json(const nlohmann::json& j);

/// One row of the policy-improvement trace, numbered across cycles.
struct TraceRow {
  int step = 0;
  int cycle = 0;
  double avg_smooth_rho = 0.0;
  double avg_classic_rho = 0.0;
  double grad_norm = 0.0;
};

/// Everything a run carries from one cycle to the next.
struct RunState {
  int cycle = 0;     // completed cycles
  int episodes = 0;  // plant episodes so far
  bool converged = false;
  model_learning::TransitionDataset data;
  nets::DenseNet net;
  std::unique_ptr<nets::Policy> policy;
  Vec params;
  Mat sigma;
  Rng rng;
  std::vector<CycleReport> reports;
  std::vector<TraceRow> trace;
};

/// Writes `dir`/{manifest.json, config.ini, model.json, policy.json,
/// dataset.csv, reports.json, trace.csv}.
void checkpoint_save(const std::string& dir, const ExperimentConfig& config, const RunState& state);

struct Checkpoint {
  ExperimentConfig config;
  RunState state;
};

/// Throws CheckpointVersionError, CheckpointCorruptError, or
/// PlantKindMismatchError when `expected_kind` is given and differs.
Checkpoint checkpoint_load(const std::string& dir, std::optional<world::PlantKind> expected_kind = std::nullopt);

struct EvalResult {
  int count = 0;
  double success_rate = 0.0;  // fraction with classical robustness > 0
  double collision_rate = 0.0;
  double mean_rho = 0.0;
  int filtered_steps = 0;
  int fallback_steps = 0;
  std::vector<double> rhos;
  std::vector<bool> collided;
  std::vector<world::Trajectory> trajectories;  // when requested
};

/// Any true state inside an obstacle or outside a safe region; with a
/// barrier, any true state with b < 0.
bool collided(const ExperimentConfig& config, const world::Trajectory& traj);

/// `count` rollouts on the true plant. Rollout i draws from derive_rng(seed, i)
/// so the result does not depend on the thread count.
EvalResult evaluate(const ExperimentConfig& config, const nets::Policy& policy, const Vec& params,
                    const nets::DenseNet& net, const Mat& sigma, int count, bool with_filter, std::uint64_t seed,
                    bool keep_trajectories = false);

struct RunOptions {
  std::string out_dir;  // empty: no checkpoints
  bool resume = true;   // continue from out_dir/checkpoint when present
  int stop_after = 0;   // stop after this many cycles in total (0: no limit)
  std::function<void(const std::string&)> log;
};

struct RunResult {
  RunState state;
  bool converged = false;
};

RunResult run(const ExperimentConfig& config, const RunOptions& options);

/// Fresh state: initial exploration, untrained net, random policy.
RunState initial_state(const ExperimentConfig& config);

/// One cycle on `state`; returns its report (also appended to the state).
CycleReport run_cycle(const ExperimentConfig& config, RunState& state);

}  // namespace stlseeker::orchestrator
