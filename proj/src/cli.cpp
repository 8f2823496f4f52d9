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

#include "stlseeker/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "stlseeker/config.hpp"
#include "stlseeker/orchestrator.hpp"
#include "stlseeker/policy_opt.hpp"
#include "stlseeker/svg.hpp"

namespace stlseeker::cli {
namespace {

namespace fs = std::filesystem;
using orchestrator::Checkpoint;

// A usage problem detected after argument parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Args {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool with_cbf = true;
  int k = 1000;
  int count = 1;
  std::string svg;
  int instances = 50;
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

// Accepts a checkpoint directory or a run directory holding checkpoint/.
fs::path resolve_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  const fs::path p(path);
  if (fs::exists(p / "manifest.json")) return p;
  if (fs::exists(p / "checkpoint" / "manifest.json")) return p / "checkpoint";
  throw UsageError("no checkpoint found at '" + path + "'");
}

std::string cycles_csv(const std::vector<orchestrator::CycleReport>& reports) {
  std::ostringstream s;
  s << "cycle,dataset_size,episodes,model_loss,improve_steps,first_smooth_rho,last_smooth_rho,success_rate,"
       "collision_rate,mean_rho,eval_count,fallback_steps,wall_seconds\n";
  for (const auto& r : reports) {
    s << r.cycle << ',' << r.dataset_size << ',' << r.episodes << ',' << format_double(r.model_loss) << ','
      << r.improve_steps << ',' << format_double(r.first_smooth_rho) << ',' << format_double(r.last_smooth_rho) << ','
      << format_double(r.success_rate) << ',' << format_double(r.collision_rate) << ',' << format_double(r.mean_rho)
      << ',' << r.eval_count << ',' << r.fallback_steps << ',' << format_double(r.wall_seconds) << '\n';
  }
  return s.str();
}

std::string trace_csv(const std::vector<orchestrator::TraceRow>& trace) {
  std::ostringstream s;
  s << "step,cycle,avg_smooth_rho,avg_classic_rho,grad_norm\n";
  for (const auto& r : trace) {
    s << r.step << ',' << r.cycle << ',' << format_double(r.avg_smooth_rho) << ','
      << format_double(r.avg_classic_rho) << ',' << format_double(r.grad_norm) << '\n';
  }
  return s.str();
}

int cmd_train(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.config.empty()) throw UsageError("--config is required");
  std::vector<std::string> sets = a.sets;
  if (a.seed) sets.push_back("experiment.seed=" + std::to_string(*a.seed));
  const orchestrator::ExperimentConfig config = orchestrator::load_config(a.config, sets);
  const fs::path dir = a.out.empty() ? fs::path("runs") / config.name : fs::path(a.out);
  orchestrator::RunOptions opts;
  opts.out_dir = dir.string();
  opts.log = [&err](const std::string& line) { err << line << std::endl; };
  const orchestrator::RunResult res = orchestrator::run(config, opts);
  write_text(dir / "cycles.csv", cycles_csv(res.state.reports));
  write_text(dir / "trace.csv", trace_csv(res.state.trace));
  const auto& last = res.state.reports.back();
  out << "cycles " << res.state.cycle << "\n"
      << "episodes " << res.state.episodes << "\n"
      << "success_rate " << last.success_rate << "\n"
      << "converged " << (res.converged ? "yes" : "no") << "\n"
      << "run_dir " << dir.string() << "\n";
  return res.converged ? kOk : kNotConverged;
}

int cmd_eval(const Args& a, std::ostream& out) {
  const fs::path dir = resolve_checkpoint(a.checkpoint);
  const Checkpoint cp = orchestrator::checkpoint_load(dir.string());
  if (a.k < 1) throw UsageError("--k must be positive");
  if (a.with_cbf && !cp.config.barrier_enabled) throw UsageError("this experiment has no barrier; use --no-cbf");
  const std::uint64_t seed = a.seed.value_or(cp.config.seed);
  const auto ev = orchestrator::evaluate(cp.config, *cp.state.policy, cp.state.params, cp.state.net, cp.state.sigma,
                                         a.k, a.with_cbf, seed);
  std::ostringstream csv;
  csv << "index,classic_rho,success,collided\n";
  for (int i = 0; i < ev.count; ++i) {
    const auto s = static_cast<std::size_t>(i);
    csv << i << ',' << format_double(ev.rhos[s]) << ',' << (ev.rhos[s] > 0.0 ? 1 : 0) << ','
        << (ev.collided[s] ? 1 : 0) << '\n';
  }
  const fs::path csv_path = a.out.empty() ? dir / "evaluation.csv" : fs::path(a.out);
  write_text(csv_path, csv.str());
  out << "trajectories " << ev.count << "\n"
      << "success_rate " << ev.success_rate << "\n"
      << "collision_rate " << ev.collision_rate << "\n"
      << "mean_rho " << ev.mean_rho << "\n"
      << "filtered_steps " << ev.filtered_steps << "\n"
      << "fallback_steps " << ev.fallback_steps << "\n";
  return kOk;
}

int cmd_rollout(const Args& a, std::ostream& out) {
  const fs::path dir = resolve_checkpoint(a.checkpoint);
  const Checkpoint cp = orchestrator::checkpoint_load(dir.string());
  if (a.count < 1) throw UsageError("--count must be positive");
  if (a.with_cbf && !cp.config.barrier_enabled) throw UsageError("this experiment has no barrier; use --no-cbf");
  const std::uint64_t seed = a.seed.value_or(cp.config.seed);
  const auto ev = orchestrator::evaluate(cp.config, *cp.state.policy, cp.state.params, cp.state.net, cp.state.sigma,
                                         a.count, a.with_cbf, seed, true);
  std::ostringstream csv;
  world::write_trajectory_csv(csv, ev.trajectories.front(), cp.config.plant.kind);
  if (a.out.empty() || a.out == "-") {
    out << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  if (!a.svg.empty()) {
    const std::string title = std::string(a.with_cbf ? "with" : "without") + " safety filter, " +
                              std::to_string(ev.count) + " rollouts, " +
                              std::to_string(std::count(ev.collided.begin(), ev.collided.end(), true)) + " collisions";
    write_text(a.svg, svg::trajectories(cp.config.plant, ev.trajectories, title, ev.collided));
  }
  return kOk;
}

int cmd_export(const Args& a, std::ostream& out) {
  const fs::path dir = resolve_checkpoint(a.checkpoint);
  const Checkpoint cp = orchestrator::checkpoint_load(dir.string());
  const fs::path dest = a.out.empty() ? dir.parent_path() / "export" : fs::path(a.out);
  const std::uint64_t seed = a.seed.value_or(cp.config.seed);
  const int shown = std::max(1, a.count);

  write_text(dest / "robustness_curve.csv", trace_csv(cp.state.trace));
  write_text(dest / "robustness_curve.svg",
             svg::robustness_curve(cp.state.trace, "average robustness during training (" + cp.config.name + ")"));
  write_text(dest / "cycles.csv", cycles_csv(cp.state.reports));

  // One panel per cycle snapshot next to the checkpoint, else the final policy.
  std::vector<std::pair<std::string, fs::path>> panels;
  for (const auto& r : cp.state.reports) {
    const fs::path snap = dir.parent_path() / ("cycle-" + std::to_string(r.cycle));
    if (fs::exists(snap / "manifest.json")) panels.emplace_back("cycle-" + std::to_string(r.cycle), snap);
  }
  if (panels.empty()) panels.emplace_back("final", dir);
  for (const auto& [name, path] : panels) {
    const Checkpoint snap = orchestrator::checkpoint_load(path.string());
    const bool filter = snap.config.barrier_enabled;
    const auto ev = orchestrator::evaluate(snap.config, *snap.state.policy, snap.state.params, snap.state.net,
                                           snap.state.sigma, shown, filter, seed, true);
    const auto& rep = snap.state.reports.back();
    std::ostringstream title;
    title << name << ", success rate " << rep.success_rate * 100.0 << "% (K=" << rep.eval_count << ")";
    std::vector<bool> failed;
    for (double rho : ev.rhos) failed.push_back(rho <= 0.0);
    write_text(dest / (name + ".svg"), svg::trajectories(snap.config.plant, ev.trajectories, title.str(), failed));
  }
  out << "exported " << panels.size() + 3 << " files to " << dest.string() << "\n";
  return kOk;
}

int cmd_check_grad(const Args& a, std::ostream& out) {
  if (a.instances < 1) throw UsageError("--instances must be positive");
  const std::uint64_t seed = a.seed.value_or(0);
  double worst_unroll = 0.0, worst_fd = 0.0;
  for (int i = 0; i < a.instances; ++i) {
    const auto inst = policy_opt::make_oracle_instance(seed + static_cast<std::uint64_t>(i));
    const auto cmp = policy_opt::compare_gradient_oracles(inst);
    worst_unroll = std::max(worst_unroll, cmp.adjoint_vs_unroll);
    worst_fd = std::max(worst_fd, cmp.adjoint_vs_fd);
  }
  const bool ok = worst_unroll < 1e-6 && worst_fd < 1e-4;
  out << "instances " << a.instances << "\n"
      << "max_rel_error_adjoint_vs_unroll " << worst_unroll << "\n"
      << "max_rel_error_adjoint_vs_fd " << worst_fd << "\n"
      << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kOk : kInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn STL-satisfying recurrent controllers on learned models."};
  app.name("stlseeker");
  app.require_subcommand(1);
  Args a;

  auto seed_opt = [&a](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&a](const std::uint64_t& s) { a.seed = s; },
                                            "random seed override");
  };

  CLI::App* train = app.add_subcommand("train", "run the learning loop from a config file");
  train->add_option("--config", a.config, "experiment config (INI)")->required();
  train->add_option("--out", a.out, "run directory (default runs/<name>)");
  train->add_option("--set", a.sets, "override, section.key=value (repeatable)");
  seed_opt(train);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the true plant");
  eval->add_option("--checkpoint", a.checkpoint, "checkpoint or run directory")->required();
  eval->add_option("--k", a.k, "number of evaluation rollouts")->capture_default_str();
  eval->add_flag("--with-cbf,!--no-cbf", a.with_cbf, "apply the safety filter (default on)");
  eval->add_option("--out", a.out, "evaluation CSV (default <checkpoint>/evaluation.csv)");
  seed_opt(eval);

  CLI::App* rollout = app.add_subcommand("rollout", "roll out a checkpoint policy and write the trajectory");
  rollout->add_option("--checkpoint", a.checkpoint, "checkpoint or run directory")->required();
  rollout->add_flag("--with-cbf,!--no-cbf", a.with_cbf, "apply the safety filter (default on)");
  rollout->add_option("--out", a.out, "trajectory CSV (default stdout)");
  rollout->add_option("--svg", a.svg, "also draw the rollouts over the regions");
  rollout->add_option("--count", a.count, "rollouts to draw in the SVG")->capture_default_str();
  seed_opt(rollout);

  CLI::App* exp = app.add_subcommand("export", "write robustness curves, cycle tables and trajectory plots");
  exp->add_option("--checkpoint", a.checkpoint, "run or checkpoint directory")->required();
  exp->add_option("--out", a.out, "output directory (default <run>/export)");
  exp->add_option("--count", a.count, "trajectories per plot")->default_val(10);
  seed_opt(exp);

  CLI::App* grad = app.add_subcommand("check-grad", "cross-check adjoint, unrolled and finite-difference gradients");
  grad->add_option("--instances", a.instances, "random instances")->capture_default_str();
  seed_opt(grad);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(a, out, err);
    if (eval->parsed()) return cmd_eval(a, out);
    if (rollout->parsed()) return cmd_rollout(a, out);
    if (exp->parsed()) return cmd_export(a, out);
    if (grad->parsed()) return cmd_check_grad(a, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const orchestrator::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const orchestrator::CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace stlseeker::cli
