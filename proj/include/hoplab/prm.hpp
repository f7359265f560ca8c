// Copyright 2026 The Hoplab Authors.
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

#ifndef HOPLAB_PRM_HPP_
#define HOPLAB_PRM_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hoplab/mcts.hpp"
#include "hoplab/policy.hpp"

namespace hoplab::prm {

// Step-level scorer R(context, step) = w . phi(context, step) + b.
struct PrmParams {
  std::vector<double> weight;
  double bias = 0.0;

  static PrmParams zeros(int dim);
  bool all_finite() const;
  friend bool operator==(const PrmParams&, const PrmParams&) = default;
};

// Features of a (context, candidate step) pair: the policy featurizer applied
// to the context, the step kind, the (previous kind, step kind) transition,
// and consistency checks of the step against the context (relation against
// the current hop, entity against the bridge entity and the retrieved
// evidence, repeated subqueries, premature answers, tag schema).
class PrmFeaturizer {
 public:
  PrmFeaturizer() = default;
  explicit PrmFeaturizer(const Vocab& vocab);

  int dim() const { return dim_; }
  // First index of the step-kind indicator block.
  int kind_offset() const { return kind_offset_; }
  const Vocab& vocab() const { return base_.vocab(); }
  std::vector<double> operator()(const State& context, const Step& step) const;

 private:
  policy::Featurizer base_;
  int kind_offset_ = 0;
  int transition_offset_ = 0;
  int match_offset_ = 0;
  int dim_ = 0;
};

inline constexpr int kNumMatchFeatures = 13;

struct PrmModel {
  PrmFeaturizer featurizer;
  PrmParams params;

  PrmModel() = default;
  explicit PrmModel(const Vocab& vocab);
  PrmModel(PrmFeaturizer f, PrmParams p);
  double score(const State& context, const Step& step) const;
};

double prm_score(const PrmModel& model, const State& context, const Step& step);

// -ln sigmoid(margin), evaluated stably.
double ranking_loss_from_margin(double margin);
double ranking_loss(const PrmModel& model, const mcts::PreferencePair& pair);
// Gradient of ranking_loss with respect to (weight..., bias).
PrmParams ranking_loss_grad(const PrmModel& model, const mcts::PreferencePair& pair);

struct PrmConfig {
  double learning_rate = 0.5;
  int epochs = 200;
  int batch_size = 0;  // <= 0: full batch
  double l2 = 0.0;
  std::uint64_t seed = 0;
};

struct PrmEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

using PrmEpochCallback = std::function<void(const PrmEpoch&)>;

PrmParams train_prm(const PrmModel& init, const std::vector<mcts::PreferencePair>& pairs,
                    const PrmConfig& config, const PrmEpochCallback& on_epoch = {});

// Fraction of pairs whose chosen step outscores the rejected one strictly.
double pair_accuracy(const PrmModel& model, const std::vector<mcts::PreferencePair>& pairs);
double mean_ranking_loss(const PrmModel& model, const std::vector<mcts::PreferencePair>& pairs);

void write_checkpoint(std::ostream& out, const PrmParams& params);
PrmParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const PrmParams& params);
PrmParams load_checkpoint(const std::string& path);

}  // namespace hoplab::prm

#endif  // HOPLAB_PRM_HPP_
