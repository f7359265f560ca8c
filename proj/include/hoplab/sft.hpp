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

#ifndef HOPLAB_SFT_HPP_
#define HOPLAB_SFT_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hoplab/policy.hpp"
#include "hoplab/synth_env.hpp"
#include "json.hpp"

namespace hoplab::sft {

// Teacher-forced training target: the tokens of the next reasoning/action
// block given a context made of closed steps.
struct SftExample {
  State context;
  std::vector<Token> target;
  std::vector<char> control;  // 1 where the target token is an open/close marker
};

struct SftConfig {
  double lambda = 2.0;  // weight on control tokens
  double learning_rate = 0.1;
  int epochs = 10;
  int batch_size = 32;  // <= 0 means full batch
  std::uint64_t seed = 0;
  int num_threads = 1;
};

// One block per run of policy steps ending at a non-plan step. A plan step is
// grouped with the step that follows it; retrieval blocks only appear inside
// contexts.
std::vector<SftExample> blocks_from_trajectory(const Trajectory& traj);
SftExample make_example(const State& context, const std::vector<Step>& steps);

std::vector<SftExample> build_sft_dataset(const env::World& world,
                                          const std::vector<env::QueryInstance>& queries,
                                          int k_docs = 3);

struct SftLoss {
  double loss = 0.0;         // normal_nll + lambda * control_nll
  double control_nll = 0.0;  // batch means
  double normal_nll = 0.0;
  std::size_t tokens = 0;
};

// Per-example NLL split by token class.
SftLoss example_nll(const policy::Policy& policy, const SftExample& ex, double lambda);

// Weighted loss summed per example and averaged over the batch. When `grad`
// is non-null it receives the exact gradient of the returned loss.
SftLoss sft_loss(const policy::Policy& policy, const std::vector<SftExample>& batch,
                 double lambda, policy::PolicyParams* grad = nullptr, int num_threads = 1);

struct EpochRecord {
  int epoch = 0;
  SftLoss loss;
};

// Called with epoch 0 (initial) and after every epoch.
using EpochCallback = std::function<void(const EpochRecord&, const policy::PolicyParams&)>;

// Mini-batch gradient descent. Throws a divergence error when the loss or
// parameters become non-finite.
policy::PolicyParams train_sft(const policy::Policy& init, const std::vector<SftExample>& dataset,
                               const SftConfig& config, const EpochCallback& on_epoch = {});

nlohmann::json example_to_json(const SftExample& ex, const Vocab& vocab);
SftExample example_from_json(const nlohmann::json& j, const Vocab& vocab);

}  // namespace hoplab::sft

#endif  // HOPLAB_SFT_HPP_
