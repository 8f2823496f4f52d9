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

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "stlseeker/config.hpp"
#include "stlseeker/orchestrator.hpp"

namespace stlseeker::orchestrator {
namespace {

namespace fs = std::filesystem;

// A small integrator experiment that runs a cycle in well under a second.
const char* kTiny = R"(
[experiment]
name = tiny
seed = 3
formula = F[0,4] Goal and G[0,4] not Pit
horizon = 4
n0 = 3
n = 2
max_cycles = 3
eval_count = 40
fast_eval_count = 20
target_success = 0.99

[plant]
kind = integrator
control_lo = -1, -1
control_hi = 1, 1
noise = 0.05
initial_lo = -0.5, -0.5
initial_hi = 0.5, 0.5
stop_distance = 0.3

[regions]
Goal = box 1.5 -1 3 1 target
Pit = disk -2.5 0 0.5 obstacle

[barrier]
region = Pit
alpha = 0.5
weights = 1, 1
margin = 2

[model]
hidden = 8
dropout = 0.1
epochs_initial = 30
epochs_refit = 10
batch = 16
sigma_inputs = 5
sigma_masks = 5

[policy]
kind = feedforward
hidden = 6
samples = 2
lr = 1e-2
window = 10
max_steps = 40
patience = 40
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stlseeker-orch-" + std::to_string(::getpid()) + "-" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const std::vector<std::string>& overrides = {}) { return parse_config_text(kTiny, overrides); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Config, ParsesSectionsAndRegions) {
  const ExperimentConfig c = tiny();
  EXPECT_EQ(c.name, "tiny");
  EXPECT_EQ(c.horizon, 4);
  EXPECT_EQ(c.plant.kind, world::PlantKind::kIntegrator);
  ASSERT_EQ(c.plant.regions.size(), 2u);
  EXPECT_EQ(c.barrier.kind, safety::BarrierKind::kOutsideDisk);
  EXPECT_DOUBLE_EQ(c.barrier.radius, 0.5);
  EXPECT_DOUBLE_EQ(c.barrier.center.x(), -2.5);
  EXPECT_EQ(c.policy.kind, nets::PolicyKind::kFeedforward);
  EXPECT_EQ(c.model.hidden, std::vector<int>{8});
  EXPECT_TRUE(c.model.periodic_inputs.empty());
  EXPECT_EQ(c.policy.improve.max_steps, 40);
}

TEST(Config, OverridesApplyBeforeInterpretation) {
  const ExperimentConfig c = tiny({"experiment.seed=11", "policy.kind=recurrent", "barrier.alpha=0.25"});
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.policy.kind, nets::PolicyKind::kRecurrent);
  EXPECT_DOUBLE_EQ(c.barrier.alpha, 0.25);
  EXPECT_NE(c.source.find("0.25"), std::string::npos);
}

TEST(Config, PiMultiplesAreAccepted) {
  const ExperimentConfig c = tiny({"plant.control_lo=-pi/2, -0.5*pi", "plant.control_hi=pi, 2*pi"});
  EXPECT_DOUBLE_EQ(c.plant.control_box.lo[0], -M_PI / 2);
  EXPECT_DOUBLE_EQ(c.plant.control_box.lo[1], -M_PI / 2);
  EXPECT_DOUBLE_EQ(c.plant.control_box.hi[1], 2 * M_PI);
}

TEST(Config, ErrorsAreReported) {
  EXPECT_THROW(tiny({"experiment.colour=blue"}), ConfigError);
  EXPECT_THROW(tiny({"nonsense"}), ConfigError);
  EXPECT_THROW(tiny({"experiment.horizon=5"}), ConfigError);
  EXPECT_THROW(tiny({"experiment.formula=F[0,4] Nowhere"}), ConfigError);
  EXPECT_THROW(tiny({"experiment.formula=F[0,4 Goal"}), ConfigError);
  EXPECT_THROW(tiny({"plant.kind=boat"}), ConfigError);
  EXPECT_THROW(tiny({"barrier.region=Goal"}), ConfigError);
  EXPECT_THROW(tiny({"model.dropout=1.5"}), ConfigError);
  EXPECT_THROW(tiny({"model.periodic_inputs=2"}), ConfigError);
  EXPECT_THROW(tiny({"experiment.n0=0"}), ConfigError);
  EXPECT_THROW(tiny({"policy.samples=two"}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/experiment.cfg"), ConfigError);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"case1.cfg", "case2.cfg"}) {
    SCOPED_TRACE(name);
    const ExperimentConfig c = load_config(std::string(STLSEEKER_SOURCE_DIR) + "/configs/" + name);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(stl::horizon(c.formula()), c.horizon);
  }
}

TEST(Evaluate, IsDeterministicForASeed) {
  const ExperimentConfig c = tiny();
  RunState s = initial_state(c);
  const EvalResult a = evaluate(c, *s.policy, s.params, s.net, s.sigma, 12, true, 5);
  const EvalResult b = evaluate(c, *s.policy, s.params, s.net, s.sigma, 12, true, 5);
  EXPECT_EQ(a.rhos, b.rhos);
  EXPECT_EQ(a.collided, b.collided);
  const EvalResult other = evaluate(c, *s.policy, s.params, s.net, s.sigma, 12, true, 6);
  EXPECT_NE(a.rhos, other.rhos);
  EXPECT_THROW(evaluate(c, *s.policy, s.params, s.net, s.sigma, 0, true, 5), std::invalid_argument);
}

TEST(Evaluate, TautologyAlwaysSucceeds) {
  const ExperimentConfig c = tiny({"experiment.formula=G[0,4] true"});
  RunState s = initial_state(c);
  const EvalResult ev = evaluate(c, *s.policy, s.params, s.net, s.sigma, 25, false, 1);
  EXPECT_DOUBLE_EQ(ev.success_rate, 1.0);
}

TEST(Evaluate, CollisionUsesTrueStates) {
  const ExperimentConfig c = tiny();
  world::Trajectory t;
  t.states = {Eigen::Vector2d(0, 0), Eigen::Vector2d(-2.4, 0.1)};
  EXPECT_TRUE(collided(c, t));
  t.states = {Eigen::Vector2d(0, 0), Eigen::Vector2d(-1.5, 0.0)};
  EXPECT_FALSE(collided(c, t));
}

TEST(Run, EpisodeAccountingAndReports) {
  const ExperimentConfig c = tiny();
  const RunResult r = run(c, {});
  ASSERT_FALSE(r.state.reports.empty());
  const int cycles = r.state.cycle;
  EXPECT_EQ(static_cast<int>(r.state.reports.size()), cycles);
  // N more episodes after every cycle except a converged or final one.
  EXPECT_EQ(r.state.episodes, c.n0 + (cycles - 1) * c.n);
  for (int i = 0; i < cycles; ++i) {
    const CycleReport& rep = r.state.reports[static_cast<std::size_t>(i)];
    EXPECT_EQ(rep.cycle, i + 1);
    EXPECT_GT(rep.improve_steps, 0);
    EXPECT_TRUE(rep.eval_count == c.fast_eval_count || rep.eval_count == c.eval_count);
    if (i > 0) EXPECT_GT(rep.dataset_size, r.state.reports[static_cast<std::size_t>(i - 1)].dataset_size);
  }
  EXPECT_EQ(static_cast<int>(r.state.trace.size()), r.state.trace.back().step + 1);
}

TEST(Run, TautologyConvergesInOneCycle) {
  const ExperimentConfig c = tiny({"experiment.formula=G[0,4] true"});
  const RunResult r = run(c, {});
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.state.cycle, 1);
  EXPECT_EQ(r.state.episodes, c.n0);
  EXPECT_EQ(r.state.reports.back().eval_count, c.eval_count);
}

TEST(Checkpoint, RoundTripIsExact) {
  const ExperimentConfig c = tiny();
  const fs::path dir = scratch("roundtrip");
  RunOptions o;
  o.out_dir = dir.string();
  o.stop_after = 1;
  const RunResult r = run(c, o);
  const Checkpoint cp = checkpoint_load((dir / "checkpoint").string(), world::PlantKind::kIntegrator);
  EXPECT_EQ(cp.config.source, c.source);
  EXPECT_EQ(cp.state.cycle, 1);
  EXPECT_EQ(cp.state.episodes, r.state.episodes);
  EXPECT_EQ(cp.state.params, r.state.params);
  EXPECT_EQ(cp.state.net.params(), r.state.net.params());
  EXPECT_EQ(cp.state.sigma, r.state.sigma);
  EXPECT_EQ(cp.state.rng, r.state.rng);
  ASSERT_EQ(cp.state.data.size(), r.state.data.size());
  for (std::size_t i = 0; i < cp.state.data.size(); ++i) {
    EXPECT_EQ(cp.state.data[i].x, r.state.data[i].x);
    EXPECT_EQ(cp.state.data[i].delta, r.state.data[i].delta);
    EXPECT_EQ(cp.state.data[i].cycle, r.state.data[i].cycle);
  }
  ASSERT_EQ(cp.state.reports.size(), 1u);
  EXPECT_EQ(cp.state.reports[0].success_rate, r.state.reports[0].success_rate);
  EXPECT_EQ(cp.state.trace.size(), r.state.trace.size());
  EXPECT_TRUE(fs::exists(dir / "cycle-1" / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "checkpoint.tmp"));
  fs::remove_all(dir);
}

TEST(Checkpoint, ResumeContinuesTheSameRun) {
  const ExperimentConfig c = tiny();
  const fs::path a = scratch("straight");
  const fs::path b = scratch("resumed");
  RunOptions straight;
  straight.out_dir = a.string();
  straight.stop_after = 2;
  const RunResult full = run(c, straight);

  RunOptions first;
  first.out_dir = b.string();
  first.stop_after = 1;
  run(c, first);
  RunOptions second = first;
  second.stop_after = 2;
  std::vector<std::string> lines;
  second.log = [&lines](const std::string& l) { lines.push_back(l); };
  const RunResult resumed = run(c, second);
  ASSERT_FALSE(lines.empty());
  EXPECT_NE(lines.front().find("resuming after cycle 1"), std::string::npos);

  ASSERT_EQ(resumed.state.reports.size(), 2u);
  const CycleReport& x = full.state.reports[1];
  const CycleReport& y = resumed.state.reports[1];
  EXPECT_EQ(x.dataset_size, y.dataset_size);
  EXPECT_EQ(x.model_loss, y.model_loss);
  EXPECT_EQ(x.last_smooth_rho, y.last_smooth_rho);
  EXPECT_EQ(x.success_rate, y.success_rate);
  EXPECT_EQ(full.state.params, resumed.state.params);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Checkpoint, ChangedConfigRefusesToResume) {
  const fs::path dir = scratch("changed");
  RunOptions o;
  o.out_dir = dir.string();
  o.stop_after = 1;
  run(tiny(), o);
  o.stop_after = 2;
  EXPECT_THROW(run(tiny({"experiment.seed=4"}), o), CheckpointError);
  fs::remove_all(dir);
}

class BrokenCheckpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch("broken");
    RunOptions o;
    o.out_dir = dir_.string();
    o.stop_after = 1;
    run(tiny(), o);
    ckpt_ = dir_ / "checkpoint";
  }
  void TearDown() override { fs::remove_all(dir_); }

  void edit_manifest(const std::function<void(nlohmann::json&)>& f) {
    nlohmann::json j = nlohmann::json::parse(slurp(ckpt_ / "manifest.json"));
    f(j);
    std::ofstream(ckpt_ / "manifest.json") << j.dump();
  }

  fs::path dir_;
  fs::path ckpt_;
};

TEST_F(BrokenCheckpoint, VersionMismatch) {
  edit_manifest([](nlohmann::json& j) { j["version"] = kCheckpointVersion + 1; });
  EXPECT_THROW(checkpoint_load(ckpt_.string()), CheckpointVersionError);
}

TEST_F(BrokenCheckpoint, WrongPlantKind) {
  EXPECT_THROW(checkpoint_load(ckpt_.string(), world::PlantKind::kUnicycle), PlantKindMismatchError);
}

TEST_F(BrokenCheckpoint, MissingFile) {
  fs::remove(ckpt_ / "model.json");
  EXPECT_THROW(checkpoint_load(ckpt_.string()), CheckpointCorruptError);
}

TEST_F(BrokenCheckpoint, TruncatedJson) {
  std::ofstream(ckpt_ / "policy.json") << "{\"kind\": ";
  EXPECT_THROW(checkpoint_load(ckpt_.string()), CheckpointCorruptError);
}

TEST_F(BrokenCheckpoint, DatasetCountDisagrees) {
  edit_manifest([](nlohmann::json& j) { j["dataset_size"] = j["dataset_size"].get<int>() + 1; });
  EXPECT_THROW(checkpoint_load(ckpt_.string()), CheckpointCorruptError);
}

TEST_F(BrokenCheckpoint, NotACheckpoint) {
  EXPECT_THROW(checkpoint_load((dir_ / "nothing-here").string()), CheckpointError);
  edit_manifest([](nlohmann::json& j) { j["format"] = "something-else"; });
  EXPECT_THROW(checkpoint_load(ckpt_.string()), CheckpointCorruptError);
}

}  // namespace
}  // namespace stlseeker::orchestrator
