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

#include "hoplab/rft.hpp"

#include "hoplab/error.hpp"
#include "hoplab/parallel.hpp"
#include "hoplab/records.hpp"

namespace hoplab::rft {

std::vector<Trajectory> sample_candidates(const policy::Policy& policy, const env::World& world,
                                          const env::QueryInstance& query, int n,
                                          double temperature, Rng& rng, int max_steps,
                                          int k_docs) {
  if (n < 1) throw InvalidArgument("sample_candidates: N must be >= 1");
  policy::RolloutOptions opt{max_steps, k_docs, temperature};
  std::vector<Trajectory> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(policy::rollout(policy, world, query, opt, rng));
  return out;
}

bool answer_correct(const Trajectory& traj, const std::vector<Token>& gold_answer) {
  const auto a = traj.answer();
  return traj.terminal && a.has_value() && *a == gold_answer;
}

std::vector<RetainedStep> filter_dual(const std::vector<Trajectory>& trajs,
                                      const prm::PrmModel& prm,
                                      const std::vector<Token>& gold_answer, double threshold) {
  std::vector<RetainedStep> out;
  for (std::size_t c = 0; c < trajs.size(); ++c) {
    const Trajectory& traj = trajs[c];
    if (!answer_correct(traj, gold_answer)) continue;
    State context(traj.query_id, traj.query_tokens);
    for (const Step& step : traj.steps) {
      if (step.is_policy()) {
        const double score = prm.score(context, step);
        if (score > threshold) {
          out.push_back({context, step, score, traj.query_id, static_cast<int>(c)});
        }
      }
      context.append_step(step);
    }
  }
  return out;
}

std::vector<RetainedStep> collect(const policy::Policy& policy, const prm::PrmModel& prm,
                                  const env::World& world,
                                  const std::vector<env::QueryInstance>& queries,
                                  const RftConfig& config) {
  std::vector<std::vector<RetainedStep>> per_query(queries.size());
  parallel_for(queries.size(), config.num_threads, [&](std::size_t i) {
    Rng rng(derive_seed(config.seed, "rft-candidates", i));
    const auto cands = sample_candidates(policy, world, queries[i], config.num_candidates,
                                         config.temperature, rng, config.max_steps,
                                         config.k_docs);
    per_query[i] = filter_dual(cands, prm, queries[i].gold_answer, config.threshold);
  });
  std::vector<RetainedStep> out;
  for (auto& v : per_query) {
    out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  return out;
}

std::vector<sft::SftExample> to_examples(const std::vector<RetainedStep>& kept) {
  std::vector<sft::SftExample> out;
  out.reserve(kept.size());
  for (const auto& r : kept) out.push_back(sft::make_example(r.context, {r.step}));
  return out;
}

policy::PolicyParams train_rft(const policy::Policy& init, const std::vector<RetainedStep>& kept,
                               const RftConfig& config, const sft::EpochCallback& on_epoch) {
  if (kept.empty()) {
    throw InvalidArgument(
        "rft: the filter retained no steps; lower the PRM threshold or raise the number of "
        "candidates per query");
  }
  sft::SftConfig sc;
  sc.lambda = 1.0;
  sc.learning_rate = config.learning_rate;
  sc.epochs = config.epochs;
  sc.batch_size = config.batch_size;
  sc.seed = derive_seed(config.seed, "rft-train");
  sc.num_threads = config.num_threads;
  return sft::train_sft(init, to_examples(kept), sc, on_epoch);
}

nlohmann::json retained_to_json(const RetainedStep& r, const Vocab& vocab) {
  nlohmann::json j = records::state_to_json(r.context, vocab);
  j["step"] = records::step_to_json(r.step, vocab);
  j["prm_score"] = records::format_double(r.score);
  j["candidate"] = r.candidate;
  return j;
}

}  // namespace hoplab::rft
