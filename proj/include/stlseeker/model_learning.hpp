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

// Learning the plant: data collection (random exploration with a proximity
// stop, then filtered policy runs), dropout-net regression on state
// differences, and the constant predictive covariance.

#pragma once

#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stlseeker/common.hpp"
#include "stlseeker/nets.hpp"
#include "stlseeker/safety.hpp"
#include "stlseeker/world.hpp"

namespace stlseeker::model_learning {

class EmptyDatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// ((x, u), delta) with delta = x_{t+1} - x_t as observed.
struct Transition {
  Vec x;
  Vec u;
  Vec delta;
  /// 0 for the random initial phase, c >= 1 for data added after cycle c.
  int cycle = 0;
  /// The transition that triggered the proximity stop (kept in the data).
  bool stop = false;
};

class TransitionDataset {
 public:
  void add(Transition t);
  void append(const TransitionDataset& other);
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Transition>& records() const { return records_; }
  const Transition& operator[](std::size_t i) const { return records_[i]; }

  /// Bounding box of the (x, u) inputs.
  Box input_bounds() const;

  void write_csv(std::ostream& out) const;
  static TransitionDataset read_csv(std::istream& in);

 private:
  std::vector<Transition> records_;
};

std::string provenance_tag(const Transition& t);

/// Random-control exploration: N0 episodes from X0, u ~ Uniform(U), each
/// truncated right after the first step whose observed state is closer than
/// the stop distance to the unsafe set.
TransitionDataset collect_initial(const world::PlantConfig& plant, int n0, int horizon, Rng& rng,
                                  std::vector<world::Trajectory>* episodes = nullptr);

/// Everything a closed-loop rollout on the true plant needs.
struct FilterContext {
  const nets::TransitionModel* model = nullptr;  // deterministic form
  const safety::BarrierSpec* barrier = nullptr;
  Mat sigma;
};

/// One closed-loop episode on the true plant. The policy sees observed
/// states; when `filter` is non-null every control passes the safety filter.
world::Trajectory run_episode(const world::PlantConfig& plant, const nets::Policy& policy, const Vec& params,
                              const FilterContext* filter, int horizon, Rng& rng);

/// Appends the observed transitions of a full-horizon episode.
void add_episode(TransitionDataset& data, const world::Trajectory& episode, int cycle);

/// N filtered policy episodes; all N * T transitions are appended to `data`.
std::vector<world::Trajectory> collect_with_policy(const world::PlantConfig& plant, const nets::Policy& policy,
                                                   const Vec& params, const FilterContext& filter, int n,
                                                   int horizon, int cycle, Rng& rng, TransitionDataset& data);

struct TrainOptions {
  int epochs = 500;
  int batch = 64;
  double lr = 1e-3;
};

/// Mean over the batch of |delta - F(x, u; W0, Z)|^2 and its gradient, with
/// one dropout mask per sample. Inputs are stacked column-wise.
double batch_loss_gradient(const nets::DenseNet& net, const Mat& inputs, const Mat& targets,
                           const std::vector<nets::DropoutMask>& masks, Vec* grad);

/// Minibatch Adam on the dataset, warm-started from the net's current
/// weights. Returns the mean training loss of every epoch.
std::vector<double> train_model(const TransitionDataset& data, nets::DenseNet& net, const TrainOptions& opts,
                                Rng& rng);

/// Mean over `n_inputs` random inputs from `input_box` of the covariance of
/// `n_masks` dropout outputs; symmetrized.
Mat estimate_sigma(const nets::DenseNet& net, const Box& input_box, int n_inputs, int n_masks, Rng& rng);

}  // namespace stlseeker::model_learning
