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

#ifndef HOPLAB_RL_HPP_
#define HOPLAB_RL_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hoplab/error.hpp"
#include "hoplab/metrics.hpp"
#include "hoplab/policy.hpp"
#include "hoplab/prm.hpp"
#include "hoplab/synth_env.hpp"
#include "json.hpp"

namespace hoplab::rl {

// Scope of the statistics used to normalize step rewards.
enum class StepStats { kPooled, kPerTrajectory, kPerStepIndex };
StepStats parse_step_stats(const std::string& name);
std::string step_stats_name(StepStats s);

struct RlConfig {
  int group_size = 8;  // G
  double beta = 0.3;
  double epsilon = 0.2;
  double nu1 = 0.2;
  double nu2 = 0.5;
  double sigma_floor = 1e-6;
  double learning_rate = 0.7;
  int iterations = 150;
  int queries_per_iteration = 8;
  int epochs_per_round = 1;
  bool include_env_tokens = false;
  StepStats step_stats = StepStats::kPooled;
  double temperature = 1.0;
  int max_steps = 12;
  int k_docs = 3;
  int eval_every = 10;  // 0 disables periodic evaluation
  // wall_ms is logged as 0 unless enabled, so metric files stay comparable
  // byte for byte across runs.
  bool record_wall_time = false;
  std::uint64_t seed = 0;
  int num_threads = 1;

  void validate() const;
};

struct RewardBundle {
  std::vector<double> step;  // one per policy step, in order
  double outcome = 0.0;
};

double step_reward(const prm::PrmModel& prm, const State& context, const Step& step, double nu1);
double outcome_reward(const Trajectory& traj, const std::vector<Token>& gold, const Vocab& vocab,
                      double nu2);
RewardBundle compute_rewards(const Trajectory& traj, const prm::PrmModel& prm,
                             const std::vector<Token>& gold, double nu1, double nu2);

// (v - mean) / max(sigma, sigma_floor) with the population deviation; an
// all-equal list maps to zeros.
std::vector<double> normalize_group(const std::vector<double>& values, double sigma_floor);

// Advantage of one scored token: position (step, token) in the trajectory.
struct TokenAdvantage {
  int step = 0;
  int pos = 0;
  double a_out = 0.0;
  double a_proc = 0.0;
  double a_total = 0.0;
};

struct TrajectoryAdvantage {
  double a_out = 0.0;
  std::vector<double> step_proc;  // per policy step
  std::vector<TokenAdvantage> tokens;
};

struct AdvantageTable {
  std::vector<TrajectoryAdvantage> trajs;
  double mu_out = 0.0, sigma_out = 0.0;
  double mu_step = 0.0, sigma_step = 0.0;  // pooled statistics
};

AdvantageTable build_advantages(const std::vector<Trajectory>& group,
                                const std::vector<RewardBundle>& rewards, double beta,
                                double sigma_floor, StepStats stats = StepStats::kPooled,
                                bool include_env_tokens = false);

// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)
double surrogate_term(double rho, double advantage, double epsilon);

std::vector<Trajectory> group_sample(const policy::Policy& policy, const env::World& world,
                                     const env::QueryInstance& query, int g, double temperature,
                                     Rng& rng, int max_steps = 12, int k_docs = 3);

struct LossDetail {
  double loss = 0.0;
  // Per trajectory, aligned with AdvantageTable::trajs[i].tokens.
  std::vector<std::vector<double>> rho;
};

// -(1/G) sum over trajectories, steps and scored tokens of the clipped
// surrogate. Old log-probabilities come from the behavior log-probs recorded
// at sampling time (recomputed under old_policy for environment tokens).
// When grad is non-null it receives the exact gradient of the loss.
LossDetail clipped_loss(const policy::Policy& policy, const std::vector<Trajectory>& group,
                        const AdvantageTable& adv, double epsilon,
                        policy::PolicyParams* grad = nullptr,
                        const policy::Policy* old_policy = nullptr);

struct RlResult {
  policy::PolicyParams params;
  MetricsLog log;
};

// Thrown when an update produces non-finite values; carries the parameters
// of the last completed iteration.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, policy::PolicyParams last_good, int iteration)
      : Error(ErrorKind::kDivergence, what), last_good_(std::move(last_good)),
        iteration_(iteration) {}
  const policy::PolicyParams& last_good() const { return last_good_; }
  int iteration() const { return iteration_; }

 private:
  policy::PolicyParams last_good_;
  int iteration_;
};

struct RlHooks {
  // Receives one audit record per sampled group (query, trajectories,
  // rewards, per-token ratios and advantages).
  std::function<void(const nlohmann::json&)> on_group;
  std::function<void(const MetricsLog::Record&)> on_iteration;
};

// Sample -> reward -> advantage -> update, one round per iteration. Metrics
// of iteration i describe the groups sampled from the parameters before the
// i-th update; a final record (iteration == iterations) evaluates the
// returned parameters.
RlResult train_rl(const policy::Policy& init, const prm::PrmModel& prm, const env::World& world,
                  const std::vector<env::QueryInstance>& train_queries,
                  const std::vector<env::QueryInstance>& eval_queries, const RlConfig& config,
                  const RlHooks& hooks = {});

inline const std::vector<std::string> kMetricColumns = {
    "mean_r_out", "mean_r_step", "format_rate", "eval_em", "eval_f1", "wall_ms"};

}  // namespace hoplab::rl

#endif  // HOPLAB_RL_HPP_
