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

#ifndef HOPLAB_RFT_HPP_
#define HOPLAB_RFT_HPP_

#include <cstdint>
#include <vector>

#include "hoplab/policy.hpp"
#include "hoplab/prm.hpp"
#include "hoplab/sft.hpp"
#include "hoplab/synth_env.hpp"
#include "json.hpp"

namespace hoplab::rft {

struct RftConfig {
  int num_candidates = 8;  // N per query
  double threshold = 0.0;  // keep steps scoring strictly above it
  double temperature = 0.7;
  int max_steps = 12;
  int k_docs = 3;
  double learning_rate = 0.1;
  int epochs = 3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int num_threads = 1;
};

std::vector<Trajectory> sample_candidates(const policy::Policy& policy, const env::World& world,
                                          const env::QueryInstance& query, int n,
                                          double temperature, Rng& rng, int max_steps = 12,
                                          int k_docs = 3);

// A step kept by the filter together with the context it extends.
struct RetainedStep {
  State context;
  Step step;
  double score = 0.0;
  int query_id = -1;
  int candidate = -1;
};

// Exact-answer trajectories only; within them, policy steps whose PRM score
// exceeds the threshold.
bool answer_correct(const Trajectory& traj, const std::vector<Token>& gold_answer);
std::vector<RetainedStep> filter_dual(const std::vector<Trajectory>& trajs, const prm::PrmModel& prm,
                                      const std::vector<Token>& gold_answer, double threshold);

// Samples candidates for every query (one RNG stream per query) and filters.
std::vector<RetainedStep> collect(const policy::Policy& policy, const prm::PrmModel& prm,
                                  const env::World& world,
                                  const std::vector<env::QueryInstance>& queries,
                                  const RftConfig& config);

std::vector<sft::SftExample> to_examples(const std::vector<RetainedStep>& kept);

// Next-token NLL (lambda = 1) on the retained steps, starting from init.
policy::PolicyParams train_rft(const policy::Policy& init, const std::vector<RetainedStep>& kept,
                               const RftConfig& config, const sft::EpochCallback& on_epoch = {});

nlohmann::json retained_to_json(const RetainedStep& r, const Vocab& vocab);

}  // namespace hoplab::rft

#endif  // HOPLAB_RFT_HPP_
