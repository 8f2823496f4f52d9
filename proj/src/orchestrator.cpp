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

#include "stlseeker/orchestrator.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string.hpp>

#include "stlseeker/policy_opt.hpp"
#include "stlseeker/safety.hpp"

namespace stlseeker::orchestrator {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kFormat = "stlseeker-checkpoint";

void say(const RunOptions& o, const std::string& line) {
  if (o.log) o.log(line);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointCorruptError("checkpoint file missing: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

json parse_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw CheckpointCorruptError(p.filename().string() + ": " + e.what());
  }
}

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(nets::vec_to_json(m.row(i).transpose()));
  return rows;
}

Mat matrix_from_json(const json& j) {
  const auto n = static_cast<Eigen::Index>(j.size());
  Mat m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec row = nets::vec_from_json(j.at(static_cast<std::size_t>(i)));
    if (row.size() != n) throw CheckpointCorruptError("covariance is not square");
    m.row(i) = row.transpose();
  }
  return m;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "step,cycle,avg_smooth_rho,avg_classic_rho,grad_norm\n";
  for (const TraceRow& r : trace) {
    out << r.step << ',' << r.cycle << ',' << format_double(r.avg_smooth_rho) << ','
        << format_double(r.avg_classic_rho) << ',' << format_double(r.grad_norm) << '\n';
  }
  return out.str();
}

std::vector<TraceRow> trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (boost::algorithm::trim_copy(line) != "step,cycle,avg_smooth_rho,avg_classic_rho,grad_norm") {
    throw CheckpointCorruptError("trace.csv: unexpected header");
  }
  std::vector<TraceRow> out;
  while (std::getline(in, line)) {
    if (boost::algorithm::trim_copy(line).empty()) continue;
    std::vector<std::string> f;
    boost::algorithm::split(f, line, boost::algorithm::is_any_of(","));
    if (f.size() != 5) throw CheckpointCorruptError("trace.csv: wrong field count");
    try {
      out.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw CheckpointCorruptError("trace.csv: bad number");
    }
  }
  return out;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_state(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (in.fail()) throw CheckpointCorruptError("manifest: bad generator state");
  return rng;
}

std::uint64_t draw_seed(Rng& rng) { return rng(); }

}  // namespace

json to_json(const CycleReport& r) {
  return {{"cycle", r.cycle},
          {"dataset_size", r.dataset_size},
          {"episodes", r.episodes},
          {"model_loss", r.model_loss},
          {"improve_steps", r.improve_steps},
          {"improve_converged", r.improve_converged},
          {"improve_diverged", r.improve_diverged},
          {"first_smooth_rho", r.first_smooth_rho},
          {"last_smooth_rho", r.last_smooth_rho},
          {"success_rate", r.success_rate},
          {"collision_rate", r.collision_rate},
          {"mean_rho", r.mean_rho},
          {"eval_count", r.eval_count},
          {"fallback_steps", r.fallback_steps},
          {"wall_seconds", r.wall_seconds},
          {"status", r.status},
          {"error", r.error}};
}

CycleReport cycle_report_from_json(const json& j) {
  CycleReport r;
  r.cycle = j.at("cycle").get<int>();
  r.dataset_size = j.at("dataset_size").get<std::size_t>();
  r.episodes = j.at("episodes").get<int>();
  r.model_loss = j.at("model_loss").get<double>();
  r.improve_steps = j.at("improve_steps").get<int>();
  r.improve_converged = j.at("improve_converged").get<bool>();
  r.improve_diverged = j.at("improve_diverged").get<bool>();
  r.first_smooth_rho = j.at("first_smooth_rho").get<double>();
  r.last_smooth_rho = j.at("last_smooth_rho").get<double>();
  r.success_rate = j.at("success_rate").get<double>();
  r.collision_rate = j.at("collision_rate").get<double>();
  r.mean_rho = j.at("mean_rho").get<double>();
  r.eval_count = j.at("eval_count").get<int>();
  r.fallback_steps = j.at("fallback_steps").get<int>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.status = j.at("status").get<std::string>();
  r.error = j.at("error").get<std::string>();
  return r;
}

void checkpoint_save(const std::string& dir, const ExperimentConfig& config, const RunState& state) {
  // Write next to the target and swap, so an interrupted save never leaves a
  // half-written checkpoint behind.
  const fs::path target(dir);
  fs::path tmp = target;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  json manifest = {{"format", kFormat},
                   {"version", kCheckpointVersion},
                   {"plant_kind", world::to_string(config.plant.kind)},
                   {"cycle", state.cycle},
                   {"episodes", state.episodes},
                   {"converged", state.converged},
                   {"dataset_size", state.data.size()},
                   {"param_count", state.params.size()},
                   {"rng", rng_state(state.rng)},
                   {"sigma", matrix_to_json(state.sigma)}};
  write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
  write_file(tmp / "config.ini", config.source);
  write_file(tmp / "model.json", nets::to_json(state.net).dump() + "\n");
  write_file(tmp / "policy.json", nets::policy_to_json(*state.policy, state.params).dump() + "\n");
  std::ostringstream data;
  state.data.write_csv(data);
  write_file(tmp / "dataset.csv", data.str());
  json reports = json::array();
  for (const CycleReport& r : state.reports) reports.push_back(to_json(r));
  write_file(tmp / "reports.json", reports.dump(2) + "\n");
  write_file(tmp / "trace.csv", trace_csv(state.trace));

  fs::remove_all(target);
  fs::rename(tmp, target);
}

Checkpoint checkpoint_load(const std::string& dir, std::optional<world::PlantKind> expected_kind) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw CheckpointError("no checkpoint at " + dir);
  const json manifest = parse_json(root / "manifest.json");
  try {
    if (manifest.at("format").get<std::string>() != kFormat) {
      throw CheckpointCorruptError("manifest: not an stlseeker checkpoint");
    }
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    const world::PlantKind kind = world::plant_kind_from_string(manifest.at("plant_kind").get<std::string>());
    if (expected_kind && *expected_kind != kind) {
      throw PlantKindMismatchError("checkpoint is for the " + world::to_string(kind) + " plant, expected " +
                                   world::to_string(*expected_kind));
    }

    Checkpoint cp;
    try {
      cp.config = parse_config_text(read_file(root / "config.ini"));
    } catch (const ConfigError& e) {
      throw CheckpointCorruptError(std::string("config.ini: ") + e.what());
    }
    if (cp.config.plant.kind != kind) throw CheckpointCorruptError("config.ini disagrees with the manifest plant");

    RunState& s = cp.state;
    s.cycle = manifest.at("cycle").get<int>();
    s.episodes = manifest.at("episodes").get<int>();
    s.converged = manifest.at("converged").get<bool>();
    s.rng = rng_from_state(manifest.at("rng").get<std::string>());
    s.sigma = matrix_from_json(manifest.at("sigma"));
    s.net = nets::dense_net_from_json(parse_json(root / "model.json"));
    auto [policy, params] = nets::policy_from_json(parse_json(root / "policy.json"));
    s.policy = std::move(policy);
    s.params = std::move(params);
    std::istringstream data(read_file(root / "dataset.csv"));
    s.data = model_learning::TransitionDataset::read_csv(data);
    for (const json& r : parse_json(root / "reports.json")) s.reports.push_back(cycle_report_from_json(r));
    s.trace = trace_from_csv(read_file(root / "trace.csv"));

    if (s.data.size() != manifest.at("dataset_size").get<std::size_t>()) {
      throw CheckpointCorruptError("dataset.csv has " + std::to_string(s.data.size()) + " records, manifest says " +
                                   std::to_string(manifest.at("dataset_size").get<std::size_t>()));
    }
    if (s.params.size() != manifest.at("param_count").get<Eigen::Index>()) {
      throw CheckpointCorruptError("policy.json parameter count disagrees with the manifest");
    }
    if (s.policy->state_dim() != cp.config.plant.state_dim() || s.sigma.rows() != cp.config.plant.state_dim()) {
      throw CheckpointCorruptError("checkpoint shapes disagree with the plant");
    }
    return cp;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointCorruptError(std::string("checkpoint unreadable: ") + e.what());
  }
}

bool collided(const ExperimentConfig& config, const world::Trajectory& traj) {
  for (const Vec& x : traj.states) {
    if (config.barrier_enabled) {
      if (safety::barrier_value(config.barrier, x) < 0.0) return true;
    } else if (world::distance_to_unsafe(x, config.plant.regions) < 0.0) {
      return true;
    }
  }
  return false;
}

EvalResult evaluate(const ExperimentConfig& config, const nets::Policy& policy, const Vec& params,
                    const nets::DenseNet& net, const Mat& sigma, int count, bool with_filter, std::uint64_t seed,
                    bool keep_trajectories) {
  if (count < 1) throw std::invalid_argument("evaluation needs at least one rollout");
  if (with_filter && !config.barrier_enabled) throw std::invalid_argument("no barrier configured for the filter");
  const stl::Formula formula = config.formula();
  const nets::NetModel model(net, config.plant.state_dim(), net.deterministic_mask());
  const model_learning::FilterContext filter{&model, &config.barrier, sigma};

  EvalResult out;
  out.count = count;
  out.rhos.assign(static_cast<std::size_t>(count), 0.0);
  out.collided.assign(static_cast<std::size_t>(count), false);
  std::vector<world::Trajectory> trajs(static_cast<std::size_t>(count));
  parallel_for(count, default_threads(), [&](int i) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(i));
    const auto s = static_cast<std::size_t>(i);
    trajs[s] = model_learning::run_episode(config.plant, policy, params, with_filter ? &filter : nullptr,
                                           config.horizon, rng);
    out.rhos[s] = stl::robustness_classic(formula, trajs[s].states);
    out.collided[s] = collided(config, trajs[s]);
  });
  int successes = 0;
  int collisions = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (out.rhos[i] > 0.0) ++successes;
    if (out.collided[i]) ++collisions;
    sum += out.rhos[i];
    for (const world::StepLog& log : trajs[i].log) {
      if (log.filtered) ++out.filtered_steps;
      if (log.status == safety::to_string(safety::SafeStatus::kInfeasibleFallback)) ++out.fallback_steps;
    }
  }
  out.success_rate = static_cast<double>(successes) / count;
  out.collision_rate = static_cast<double>(collisions) / count;
  out.mean_rho = sum / count;
  if (keep_trajectories) out.trajectories = std::move(trajs);
  return out;
}

RunState initial_state(const ExperimentConfig& config) {
  RunState s;
  s.rng = derive_rng(config.seed, 0);
  const int n = config.plant.state_dim();
  const int m = config.plant.control_dim();
  s.data = model_learning::collect_initial(config.plant, config.n0, config.horizon, s.rng);
  s.episodes = config.n0;
  std::vector<int> widths{n + m};
  widths.insert(widths.end(), config.model.hidden.begin(), config.model.hidden.end());
  widths.push_back(n);
  s.net = nets::DenseNet(widths, config.model.dropout, config.model.periodic_inputs);
  s.net.initialize(s.rng);
  s.policy = nets::make_policy(config.policy.kind, n, config.plant.control_box, config.policy.hidden);
  s.params = s.policy->initial_params(s.rng);
  s.sigma = Mat::Zero(n, n);
  return s;
}

CycleReport run_cycle(const ExperimentConfig& config, RunState& state) {
  const auto start = std::chrono::steady_clock::now();
  CycleReport rep;
  rep.cycle = state.cycle + 1;
  const stl::Formula formula = config.formula();

  // Model learning on everything collected so far.
  model_learning::TrainOptions train;
  train.epochs = state.cycle == 0 ? config.model.epochs_initial : config.model.epochs_refit;
  train.batch = config.model.batch;
  train.lr = config.model.lr;
  rep.dataset_size = state.data.size();
  if (train.epochs > 0) {
    const std::vector<double> losses = model_learning::train_model(state.data, state.net, train, state.rng);
    rep.model_loss = losses.back();
  }
  state.sigma = model_learning::estimate_sigma(state.net, state.data.input_bounds(), config.model.sigma_inputs,
                                               config.model.sigma_masks, state.rng);

  // Policy improvement on the sampled models.
  const policy_opt::ImproveResult imp =
      policy_opt::improve_policy(*state.policy, state.params, state.net, formula, config.plant.initial_box,
                                 config.horizon, config.policy.improve, state.rng);
  state.params = imp.params;
  const int offset = state.trace.empty() ? 0 : state.trace.back().step + 1;
  for (const policy_opt::TracePoint& p : imp.trace) {
    state.trace.push_back({offset + p.step, rep.cycle, p.avg_smooth_rho, p.avg_classic_rho, p.grad_norm});
  }
  rep.improve_steps = static_cast<int>(imp.trace.size());
  rep.improve_converged = imp.converged;
  rep.improve_diverged = imp.diverged;
  if (!imp.trace.empty()) {
    rep.first_smooth_rho = imp.trace.front().avg_smooth_rho;
    rep.last_smooth_rho = imp.trace.back().avg_smooth_rho;
  }

  // Evaluation on the true plant: a quick screen, confirmed at full size.
  const bool filter = config.barrier_enabled;
  EvalResult ev = evaluate(config, *state.policy, state.params, state.net, state.sigma, config.fast_eval_count, filter,
                           draw_seed(state.rng));
  if (ev.success_rate >= config.target_success) {
    ev = evaluate(config, *state.policy, state.params, state.net, state.sigma, config.eval_count, filter,
                  draw_seed(state.rng));
    state.converged = ev.success_rate >= config.target_success;
  }
  rep.success_rate = ev.success_rate;
  rep.collision_rate = ev.collision_rate;
  rep.mean_rho = ev.mean_rho;
  rep.eval_count = ev.count;

  // More data, unless this was the last cycle.
  if (!state.converged && rep.cycle < config.max_cycles) {
    const nets::NetModel model(state.net, config.plant.state_dim(), state.net.deterministic_mask());
    const model_learning::FilterContext ctx{&model, &config.barrier, state.sigma};
    std::vector<world::Trajectory> episodes;
    if (filter) {
      episodes = model_learning::collect_with_policy(config.plant, *state.policy, state.params, ctx, config.n,
                                                     config.horizon, rep.cycle, state.rng, state.data);
    } else {
      for (int i = 0; i < config.n; ++i) {
        episodes.push_back(model_learning::run_episode(config.plant, *state.policy, state.params, nullptr,
                                                       config.horizon, state.rng));
        model_learning::add_episode(state.data, episodes.back(), rep.cycle);
      }
    }
    for (const auto& e : episodes) {
      for (const auto& log : e.log) {
        if (log.status == safety::to_string(safety::SafeStatus::kInfeasibleFallback)) ++rep.fallback_steps;
      }
    }
    state.episodes += config.n;
  }
  rep.episodes = state.episodes;
  state.cycle = rep.cycle;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  state.reports.push_back(rep);
  return rep;
}

RunResult run(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const fs::path out(options.out_dir);
  const fs::path latest = out / "checkpoint";
  RunResult res;
  RunState& state = res.state;
  if (!options.out_dir.empty() && options.resume && fs::exists(latest / "manifest.json")) {
    Checkpoint cp = checkpoint_load(latest.string(), config.plant.kind);
    if (cp.config.source != config.source) {
      throw CheckpointError("checkpoint in " + options.out_dir + " was made with a different configuration");
    }
    state = std::move(cp.state);
    say(options, "resuming after cycle " + std::to_string(state.cycle));
  } else {
    state = initial_state(config);
    say(options, "initial data: " + std::to_string(state.data.size()) + " transitions from " +
                     std::to_string(config.n0) + " episodes");
  }
  if (!options.out_dir.empty()) fs::create_directories(out);

  while (!state.converged && state.cycle < config.max_cycles &&
         (options.stop_after == 0 || state.cycle < options.stop_after)) {
    CycleReport rep;
    try {
      rep = run_cycle(config, state);
    } catch (const std::exception& e) {
      if (!options.out_dir.empty()) {
        CycleReport failed;
        failed.cycle = state.cycle + 1;
        failed.status = "failed";
        failed.error = e.what();
        json reports = json::array();
        for (const CycleReport& r : state.reports) reports.push_back(to_json(r));
        reports.push_back(to_json(failed));
        write_file(out / "failed-cycle.json", reports.dump(2) + "\n");
      }
      throw;
    }
    std::ostringstream line;
    line << "cycle " << rep.cycle << ": data " << rep.dataset_size << ", loss " << rep.model_loss << ", steps "
         << rep.improve_steps << ", rho " << rep.first_smooth_rho << " -> " << rep.last_smooth_rho << ", gamma "
         << rep.success_rate << " (K=" << rep.eval_count << "), collisions " << rep.collision_rate << ", episodes "
         << rep.episodes << ", " << rep.wall_seconds << " s";
    say(options, line.str());
    if (!options.out_dir.empty()) {
      checkpoint_save(latest.string(), config, state);
      checkpoint_save((out / ("cycle-" + std::to_string(rep.cycle))).string(), config, state);
    }
  }
  res.converged = state.converged;
  return res;
}

}  // namespace stlseeker::orchestrator
