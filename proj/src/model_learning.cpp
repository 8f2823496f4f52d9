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

#include "stlseeker/model_learning.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <numeric>
#include <ostream>

#include <boost/algorithm/string.hpp>

namespace stlseeker::model_learning {
namespace {

using RowMajorConstMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

void TransitionDataset::add(Transition t) {
  if (!records_.empty()) {
    const Transition& first = records_.front();
    if (t.x.size() != first.x.size() || t.u.size() != first.u.size() || t.delta.size() != first.delta.size()) {
      throw std::invalid_argument("transition shape differs from the dataset");
    }
  }
  if (t.delta.size() != t.x.size()) throw std::invalid_argument("delta must have the state dimension");
  records_.push_back(std::move(t));
}

void TransitionDataset::append(const TransitionDataset& other) {
  for (const Transition& t : other.records_) add(t);
}

Box TransitionDataset::input_bounds() const {
  if (records_.empty()) throw EmptyDatasetError("dataset is empty");
  const Eigen::Index n = records_.front().x.size();
  const Eigen::Index m = records_.front().u.size();
  Vec lo = Vec::Constant(n + m, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const Transition& t : records_) {
    Vec in(n + m);
    in << t.x, t.u;
    lo = lo.cwiseMin(in);
    hi = hi.cwiseMax(in);
  }
  return Box(lo, hi);
}

std::string provenance_tag(const Transition& t) {
  if (t.cycle == 0) return t.stop ? "initial-stop" : "initial";
  return "cycle-" + std::to_string(t.cycle);
}

void TransitionDataset::write_csv(std::ostream& out) const {
  if (records_.empty()) {
    out << "provenance\n";
    return;
  }
  const Eigen::Index n = records_.front().x.size();
  const Eigen::Index m = records_.front().u.size();
  for (Eigen::Index i = 0; i < n; ++i) out << 'x' << i + 1 << ',';
  for (Eigen::Index i = 0; i < m; ++i) out << 'u' << i + 1 << ',';
  for (Eigen::Index i = 0; i < n; ++i) out << "dx" << i + 1 << ',';
  out << "provenance\n";
  for (const Transition& t : records_) {
    for (Eigen::Index i = 0; i < n; ++i) out << format_double(t.x[i]) << ',';
    for (Eigen::Index i = 0; i < m; ++i) out << format_double(t.u[i]) << ',';
    for (Eigen::Index i = 0; i < n; ++i) out << format_double(t.delta[i]) << ',';
    out << provenance_tag(t) << '\n';
  }
}

TransitionDataset TransitionDataset::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file");
  std::vector<std::string> header;
  boost::split(header, line, boost::is_any_of(","));
  const auto count = [&](const std::string& prefix) {
    return std::count_if(header.begin(), header.end(), [&](const std::string& h) {
      return h.rfind(prefix, 0) == 0 && h.size() > prefix.size() && std::isdigit(static_cast<unsigned char>(h[prefix.size()]));
    });
  };
  const auto n = static_cast<Eigen::Index>(count("x"));
  const auto m = static_cast<Eigen::Index>(count("u"));
  if (header.back() != "provenance" || static_cast<Eigen::Index>(header.size()) != 2 * n + m + 1) {
    throw std::runtime_error("unexpected dataset header '" + line + "'");
  }
  TransitionDataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    boost::split(cells, line, boost::is_any_of(","));
    if (cells.size() != header.size()) throw std::runtime_error("malformed dataset row '" + line + "'");
    Transition t;
    t.x.resize(n);
    t.u.resize(m);
    t.delta.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) t.x[i] = std::stod(cells[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < m; ++i) t.u[i] = std::stod(cells[static_cast<std::size_t>(n + i)]);
    for (Eigen::Index i = 0; i < n; ++i) t.delta[i] = std::stod(cells[static_cast<std::size_t>(n + m + i)]);
    const std::string& tag = cells.back();
    if (tag == "initial" || tag == "initial-stop") {
      t.stop = tag == "initial-stop";
    } else if (tag.rfind("cycle-", 0) == 0) {
      t.cycle = std::stoi(tag.substr(6));
    } else {
      throw std::runtime_error("unknown provenance '" + tag + "'");
    }
    data.add(std::move(t));
  }
  return data;
}

TransitionDataset collect_initial(const world::PlantConfig& plant, int n0, int horizon, Rng& rng,
                                  std::vector<world::Trajectory>* episodes) {
  TransitionDataset data;
  for (int i = 0; i < n0; ++i) {
    world::Trajectory traj;
    Vec x = world::sample_initial(plant.initial_box, rng);
    Vec obs = world::observe(x, plant.noise_box, rng);
    traj.states.push_back(x);
    traj.observed.push_back(obs);
    for (int t = 0; t < horizon; ++t) {
      const Vec u = plant.control_box.sample(rng);
      x = world::plant_step(plant, x, u);
      const Vec next_obs = world::observe(x, plant.noise_box, rng);
      const bool close = world::distance_to_unsafe(next_obs, plant.regions) < plant.stop_distance;
      data.add({obs, u, next_obs - obs, 0, close});
      traj.states.push_back(x);
      traj.observed.push_back(next_obs);
      traj.controls.push_back(u);
      world::StepLog log;
      log.raw_control = u;
      traj.log.push_back(std::move(log));
      obs = next_obs;
      if (close) {
        traj.stopped = true;
        traj.stop_index = traj.steps();
        break;
      }
    }
    traj.check();
    if (episodes != nullptr) episodes->push_back(std::move(traj));
  }
  return data;
}

world::Trajectory run_episode(const world::PlantConfig& plant, const nets::Policy& policy, const Vec& params,
                              const FilterContext* filter, int horizon, Rng& rng) {
  nets::PolicyRunner runner(policy, params);
  world::Trajectory traj;
  Vec x = world::sample_initial(plant.initial_box, rng);
  Vec obs = world::observe(x, plant.noise_box, rng);
  traj.states.push_back(x);
  traj.observed.push_back(obs);
  for (int t = 0; t < horizon; ++t) {
    const Vec raw = runner.step(obs);
    world::StepLog log;
    log.raw_control = raw;
    Vec u = raw;
    if (filter != nullptr) {
      const safety::SafeControlResult res =
          safety::safe_control(*filter->barrier, *filter->model, filter->sigma, obs, raw, plant.control_box);
      u = res.u;
      log.filtered = res.status != safety::SafeStatus::kUnmodified;
      log.slack = res.slack;
      log.status = safety::to_string(res.status);
    }
    u = plant.control_box.clamp(u);
    x = world::plant_step(plant, x, u);
    obs = world::observe(x, plant.noise_box, rng);
    traj.states.push_back(x);
    traj.observed.push_back(obs);
    traj.controls.push_back(u);
    traj.log.push_back(std::move(log));
  }
  traj.check();
  return traj;
}

void add_episode(TransitionDataset& data, const world::Trajectory& episode, int cycle) {
  if (episode.observed.size() != episode.states.size()) throw std::invalid_argument("episode has no observations");
  for (int t = 0; t < episode.steps(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    data.add({episode.observed[i], episode.controls[i], episode.observed[i + 1] - episode.observed[i], cycle, false});
  }
}

std::vector<world::Trajectory> collect_with_policy(const world::PlantConfig& plant, const nets::Policy& policy,
                                                   const Vec& params, const FilterContext& filter, int n,
                                                   int horizon, int cycle, Rng& rng, TransitionDataset& data) {
  std::vector<world::Trajectory> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(run_episode(plant, policy, params, &filter, horizon, rng));
    add_episode(data, out.back(), cycle);
  }
  return out;
}

double batch_loss_gradient(const nets::DenseNet& net, const Mat& inputs, const Mat& targets,
                           const std::vector<nets::DropoutMask>& masks, Vec* grad) {
  const std::vector<int>& widths = net.widths();
  const std::size_t layers = widths.size() - 1;
  const Eigen::Index batch = inputs.cols();
  if (inputs.rows() != net.input_dim() || targets.rows() != net.output_dim() || targets.cols() != batch) {
    throw nets::ShapeError("batch shapes do not match the net");
  }
  if (static_cast<Eigen::Index>(masks.size()) != batch) throw nets::ShapeError("one mask per sample is required");
  const Vec& p = net.params();

  auto layer_input = [&](std::size_t l) { return l == 0 ? net.encoded_dim() : widths[l]; };
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets.push_back(offset);
    offset += static_cast<std::size_t>(widths[l + 1]) * static_cast<std::size_t>(layer_input(l) + 1);
  }

  // acts[l] is the input of layer l; tanh_out[l] caches tanh before masking.
  std::vector<Mat> acts;
  if (net.periodic_inputs().empty()) {
    acts.push_back(inputs);
  } else {
    Mat encoded(net.encoded_dim(), batch);
    for (Eigen::Index s = 0; s < batch; ++s) encoded.col(s) = net.encode(inputs.col(s));
    acts.push_back(std::move(encoded));
  }
  std::vector<Mat> tanh_out;
  std::vector<Mat> mask_mats;
  for (std::size_t l = 0; l < layers; ++l) {
    const Eigen::Index rows = widths[l + 1];
    const Eigen::Index cols = layer_input(l);
    RowMajorConstMap w(p.data() + offsets[l], rows, cols);
    const auto b = p.segment(static_cast<Eigen::Index>(offsets[l]) + rows * cols, rows);
    Mat z = w * acts.back();
    z.colwise() += b;
    if (l + 1 == layers) {
      acts.push_back(std::move(z));
      break;
    }
    Mat t = z.array().tanh().matrix();
    Mat mk(rows, batch);
    for (Eigen::Index s = 0; s < batch; ++s) {
      const nets::DropoutMask& mask = masks[static_cast<std::size_t>(s)];
      if (mask.deterministic) {
        mk.col(s).setConstant(mask.keep_scale);
      } else {
        mk.col(s) = mask.layers.at(l);
      }
    }
    acts.push_back(t.cwiseProduct(mk));
    tanh_out.push_back(std::move(t));
    mask_mats.push_back(std::move(mk));
  }
  const Mat err = acts.back() - targets;
  const double loss = err.squaredNorm() / static_cast<double>(batch);
  if (grad == nullptr) return loss;

  grad->setZero(static_cast<Eigen::Index>(offset));
  Mat d = 2.0 * err / static_cast<double>(batch);
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::Index rows = widths[l + 1];
    const Eigen::Index cols = layer_input(l);
    RowMajorMap(grad->data() + offsets[l], rows, cols) = d * acts[l].transpose();
    grad->segment(static_cast<Eigen::Index>(offsets[l]) + rows * cols, rows) = d.rowwise().sum();
    if (l == 0) break;
    RowMajorConstMap w(p.data() + offsets[l], rows, cols);
    Mat dh = w.transpose() * d;
    const Mat& t = tanh_out[l - 1];
    d = dh.cwiseProduct(mask_mats[l - 1]).cwiseProduct((1.0 - t.array().square()).matrix());
  }
  return loss;
}

std::vector<double> train_model(const TransitionDataset& data, nets::DenseNet& net, const TrainOptions& opts,
                                Rng& rng) {
  if (data.empty()) throw EmptyDatasetError("cannot train on an empty dataset");
  if (opts.batch <= 0 || opts.epochs < 0) throw std::invalid_argument("invalid training schedule");
  const std::size_t count = data.size();
  const Eigen::Index n = data[0].x.size();
  const Eigen::Index m = data[0].u.size();
  Mat all_in(n + m, static_cast<Eigen::Index>(count));
  Mat all_out(n, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    all_in.col(static_cast<Eigen::Index>(i)) << data[i].x, data[i].u;
    all_out.col(static_cast<Eigen::Index>(i)) = data[i].delta;
  }

  nets::AdamState adam;
  adam.lr = opts.lr;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  Vec grad;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(opts.batch)) {
      const std::size_t end = std::min(count, start + static_cast<std::size_t>(opts.batch));
      const auto bsize = static_cast<Eigen::Index>(end - start);
      Mat in(n + m, bsize);
      Mat out(n, bsize);
      std::vector<nets::DropoutMask> masks;
      for (std::size_t k = start; k < end; ++k) {
        in.col(static_cast<Eigen::Index>(k - start)) = all_in.col(static_cast<Eigen::Index>(order[k]));
        out.col(static_cast<Eigen::Index>(k - start)) = all_out.col(static_cast<Eigen::Index>(order[k]));
        masks.push_back(net.sample_mask(rng));
      }
      const double loss = batch_loss_gradient(net, in, out, masks, &grad);
      total += loss * static_cast<double>(bsize);
      nets::adam_step(net.params(), grad, adam);
    }
    history.push_back(total / static_cast<double>(count));
  }
  return history;
}

Mat estimate_sigma(const nets::DenseNet& net, const Box& input_box, int n_inputs, int n_masks, Rng& rng) {
  if (n_masks < 2) throw std::invalid_argument("at least two masks are needed for a covariance");
  if (n_inputs < 1) throw std::invalid_argument("at least one input is needed");
  const int n = net.output_dim();
  Mat sigma = Mat::Zero(n, n);
  Mat outputs(n, n_masks);
  for (int i = 0; i < n_inputs; ++i) {
    const Vec in = input_box.sample(rng);
    for (int k = 0; k < n_masks; ++k) outputs.col(k) = net.apply(in, net.sample_mask(rng));
    const Vec mean = outputs.rowwise().mean();
    const Mat centered = outputs.colwise() - mean;
    sigma += centered * centered.transpose() / static_cast<double>(n_masks - 1);
  }
  sigma /= static_cast<double>(n_inputs);
  return 0.5 * (sigma + sigma.transpose());
}

}  // namespace stlseeker::model_learning
