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

#include "hoplab/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hoplab/parallel.hpp"
#include "hoplab/records.hpp"

namespace hoplab::rl {

using policy::Policy;
using policy::PolicyParams;

StepStats parse_step_stats(const std::string& name) {
  if (name == "pooled") return StepStats::kPooled;
  if (name == "per_trajectory") return StepStats::kPerTrajectory;
  if (name == "per_step_index") return StepStats::kPerStepIndex;
  throw InvalidArgument("unknown step statistics scope '" + name + "'");
}

std::string step_stats_name(StepStats s) {
  switch (s) {
    case StepStats::kPooled: return "pooled";
    case StepStats::kPerTrajectory: return "per_trajectory";
    case StepStats::kPerStepIndex: return "per_step_index";
  }
  return "pooled";
}

void RlConfig::validate() const {
  if (group_size < 2) throw InvalidArgument("rl: group size G must be >= 2");
  if (!(beta >= 0.0)) throw InvalidArgument("rl: beta must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("rl: epsilon must be in (0, 1)");
  if (!(sigma_floor > 0.0)) throw InvalidArgument("rl: sigma_floor must be > 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("rl: learning rate must be > 0");
  if (iterations < 0) throw InvalidArgument("rl: iterations must be >= 0");
  if (queries_per_iteration < 1) throw InvalidArgument("rl: queries_per_iteration must be >= 1");
  if (epochs_per_round < 1) throw InvalidArgument("rl: epochs_per_round must be >= 1");
  if (max_steps < 1) throw InvalidArgument("rl: max_steps must be >= 1");
  if (k_docs < 1) throw InvalidArgument("rl: k_docs must be >= 1");
  if (temperature < 0.0) throw InvalidArgument("rl: temperature must be >= 0");
}

double step_reward(const prm::PrmModel& prm, const State& context, const Step& step, double nu1) {
  return prm.score(context, step) + nu1 * (is_step_valid(step, prm.featurizer.vocab()) ? 1.0 : 0.0);
}

double outcome_reward(const Trajectory& traj, const std::vector<Token>& gold, const Vocab& vocab,
                      double nu2) {
  return answer_f1(traj, gold) + nu2 * (is_traj_valid(traj, vocab) ? 1.0 : 0.0);
}

RewardBundle compute_rewards(const Trajectory& traj, const prm::PrmModel& prm,
                             const std::vector<Token>& gold, double nu1, double nu2) {
  RewardBundle r;
  State context(traj.query_id, traj.query_tokens);
  for (const Step& s : traj.steps) {
    if (s.is_policy()) r.step.push_back(step_reward(prm, context, s, nu1));
    context.append_step(s);
  }
  r.outcome = outcome_reward(traj, gold, prm.featurizer.vocab(), nu2);
  return r;
}

std::vector<double> normalize_group(const std::vector<double>& values, double sigma_floor) {
  if (values.size() < 2) throw InvalidArgument("normalize_group: need at least two values");
  if (!(sigma_floor > 0.0)) throw InvalidArgument("normalize_group: sigma_floor must be > 0");
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> out(values.size(), 0.0);
  const bool all_equal = std::all_of(values.begin(), values.end(),
                                     [&](double v) { return v == values.front(); });
  if (all_equal) return out;
  const double denom = std::max(sigma, sigma_floor);
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mu) / denom;
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  return {mu, std::sqrt(var / n)};
}

// Normalizes a list that may hold fewer than two values (zeros then).
std::vector<double> normalize_or_zero(const std::vector<double>& v, double sigma_floor) {
  if (v.size() < 2) return std::vector<double>(v.size(), 0.0);
  return normalize_group(v, sigma_floor);
}

}  // namespace

AdvantageTable build_advantages(const std::vector<Trajectory>& group,
                                const std::vector<RewardBundle>& rewards, double beta,
                                double sigma_floor, StepStats stats, bool include_env_tokens) {
  if (group.size() != rewards.size()) {
    throw InvalidArgument("build_advantages: rewards do not align with trajectories");
  }
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (static_cast<int>(rewards[i].step.size()) != group[i].policy_step_count()) {
      throw InvalidArgument("build_advantages: trajectory " + std::to_string(i) +
                            " has a step-reward count different from its policy steps");
    }
  }
  AdvantageTable table;
  table.trajs.resize(group.size());

  std::vector<double> outcomes;
  std::vector<double> pooled;
  for (const auto& r : rewards) {
    outcomes.push_back(r.outcome);
    pooled.insert(pooled.end(), r.step.begin(), r.step.end());
  }
  std::tie(table.mu_out, table.sigma_out) = mean_std(outcomes);
  std::tie(table.mu_step, table.sigma_step) = mean_std(pooled);
  const auto a_out = normalize_group(outcomes, sigma_floor);

  switch (stats) {
    case StepStats::kPooled: {
      const auto a = normalize_or_zero(pooled, sigma_floor);
      std::size_t at = 0;
      for (std::size_t i = 0; i < group.size(); ++i) {
        const std::size_t n = rewards[i].step.size();
        table.trajs[i].step_proc.assign(a.begin() + at, a.begin() + at + n);
        at += n;
      }
      break;
    }
    case StepStats::kPerTrajectory:
      for (std::size_t i = 0; i < group.size(); ++i) {
        table.trajs[i].step_proc = normalize_or_zero(rewards[i].step, sigma_floor);
      }
      break;
    case StepStats::kPerStepIndex: {
      std::size_t longest = 0;
      for (const auto& r : rewards) longest = std::max(longest, r.step.size());
      for (std::size_t i = 0; i < group.size(); ++i) {
        table.trajs[i].step_proc.assign(rewards[i].step.size(), 0.0);
      }
      for (std::size_t t = 0; t < longest; ++t) {
        std::vector<double> column;
        std::vector<std::size_t> owners;
        for (std::size_t i = 0; i < group.size(); ++i) {
          if (t < rewards[i].step.size()) {
            column.push_back(rewards[i].step[t]);
            owners.push_back(i);
          }
        }
        const auto a = normalize_or_zero(column, sigma_floor);
        for (std::size_t k = 0; k < owners.size(); ++k) table.trajs[owners[k]].step_proc[t] = a[k];
      }
      break;
    }
  }

  for (std::size_t i = 0; i < group.size(); ++i) {
    TrajectoryAdvantage& ta = table.trajs[i];
    ta.a_out = a_out[i];
    int policy_step = 0;
    for (std::size_t s = 0; s < group[i].steps.size(); ++s) {
      const Step& step = group[i].steps[s];
      const bool policy = step.is_policy();
      if (!policy && !include_env_tokens) continue;
      const double proc = policy ? ta.step_proc[policy_step] : 0.0;
      for (std::size_t k = 0; k < step.tokens.size(); ++k) {
        TokenAdvantage t;
        t.step = static_cast<int>(s);
        t.pos = static_cast<int>(k);
        t.a_out = ta.a_out;
        t.a_proc = proc;
        t.a_total = t.a_out + beta * t.a_proc;
        ta.tokens.push_back(t);
      }
      if (policy) ++policy_step;
    }
  }
  return table;
}

double surrogate_term(double rho, double advantage, double epsilon) {
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(rho * advantage, clipped * advantage);
}

std::vector<Trajectory> group_sample(const Policy& policy, const env::World& world,
                                     const env::QueryInstance& query, int g, double temperature,
                                     Rng& rng, int max_steps, int k_docs) {
  if (g < 2) throw InvalidArgument("group_sample: G must be >= 2");
  policy::RolloutOptions opt{max_steps, k_docs, temperature};
  std::vector<Trajectory> out;
  out.reserve(g);
  for (int i = 0; i < g; ++i) out.push_back(policy::rollout(policy, world, query, opt, rng));
  return out;
}

LossDetail clipped_loss(const Policy& policy, const std::vector<Trajectory>& group,
                        const AdvantageTable& adv, double epsilon, PolicyParams* grad,
                        const Policy* old_policy) {
  if (adv.trajs.size() != group.size()) {
    throw InvalidArgument("clipped_loss: advantage table does not match the group");
  }
  if (group.empty()) throw InvalidArgument("clipped_loss: empty group");
  const double inv_g = 1.0 / static_cast<double>(group.size());
  if (grad) *grad = PolicyParams::zeros(policy.params.vocab_size, policy.params.feature_dim);
  LossDetail out;
  out.rho.resize(group.size());
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Trajectory& traj = group[i];
    const auto& toks = adv.trajs[i].tokens;
    std::size_t cursor = 0;
    State state(traj.query_id, traj.query_tokens);
    for (std::size_t s = 0; s < traj.steps.size(); ++s) {
      const Step& step = traj.steps[s];
      for (std::size_t k = 0; k < step.tokens.size(); ++k) {
        const Token tok = step.tokens[k];
        const bool scored = cursor < toks.size() && toks[cursor].step == static_cast<int>(s) &&
                            toks[cursor].pos == static_cast<int>(k);
        if (scored) {
          const policy::TokenEval ev = policy::evaluate(policy, state);
          const double logp = ev.log_prob(tok);
          double old_logp;
          if (step.is_policy() && k < step.behavior_logprob.size() &&
              !std::isnan(step.behavior_logprob[k])) {
            old_logp = step.behavior_logprob[k];
          } else if (old_policy != nullptr) {
            old_logp = policy::log_prob(*old_policy, state, tok);
          } else {
            throw InvalidArgument("clipped_loss: no behavior log-probability for step " +
                                  std::to_string(s) + " token " + std::to_string(k));
          }
          const double rho = std::exp(logp - old_logp);
          if (!std::isfinite(rho)) {
            throw Error(ErrorKind::kDivergence, "clipped_loss: non-finite probability ratio");
          }
          const double a = toks[cursor].a_total;
          total += surrogate_term(rho, a, epsilon);
          out.rho[i].push_back(rho);
          if (grad) {
            const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon) * a;
            if (rho * a <= clipped) {
              policy::accumulate_log_prob_grad(ev, tok, -inv_g * a * rho, *grad);
            }
          }
          ++cursor;
        }
        if (step.is_policy()) {
          state.push(tok);
        } else {
          state.push_environment(tok);
        }
      }
    }
    if (cursor != toks.size()) {
      throw InvalidArgument("clipped_loss: advantage entries do not match trajectory tokens");
    }
  }
  out.loss = -inv_g * total;
  return out;
}

namespace {

nlohmann::json group_dump(int iteration, const env::QueryInstance& query,
                          const std::vector<Trajectory>& group,
                          const std::vector<RewardBundle>& rewards, const AdvantageTable& adv,
                          const LossDetail& detail, const Vocab& vocab) {
  using records::format_double;
  nlohmann::json trajs = nlohmann::json::array();
  for (std::size_t i = 0; i < group.size(); ++i) {
    nlohmann::json t = records::trajectory_to_json(group[i], vocab);
    std::vector<std::string> steps, a_tot, a_proc, rho;
    for (double r : rewards[i].step) steps.push_back(format_double(r));
    for (std::size_t k = 0; k < adv.trajs[i].tokens.size(); ++k) {
      a_tot.push_back(format_double(adv.trajs[i].tokens[k].a_total));
      a_proc.push_back(format_double(adv.trajs[i].tokens[k].a_proc));
      rho.push_back(k < detail.rho[i].size() ? format_double(detail.rho[i][k]) : "nan");
    }
    t["r_step"] = steps;
    t["r_out"] = format_double(rewards[i].outcome);
    t["a_out"] = format_double(adv.trajs[i].a_out);
    t["token_a_proc"] = a_proc;
    t["token_a_total"] = a_tot;
    t["token_rho"] = rho;
    trajs.push_back(std::move(t));
  }
  return nlohmann::json{{"iteration", iteration},
                        {"query_id", query.id},
                        {"mu_out", format_double(adv.mu_out)},
                        {"sigma_out", format_double(adv.sigma_out)},
                        {"mu_step", format_double(adv.mu_step)},
                        {"sigma_step", format_double(adv.sigma_step)},
                        {"trajectories", trajs}};
}

}  // namespace

RlResult train_rl(const Policy& init, const prm::PrmModel& prm, const env::World& world,
                  const std::vector<env::QueryInstance>& train_queries,
                  const std::vector<env::QueryInstance>& eval_queries, const RlConfig& config,
                  const RlHooks& hooks) {
  config.validate();
  if (train_queries.empty()) throw InvalidArgument("rl: no training queries");
  if (config.include_env_tokens && init.masking) {
    throw InvalidArgument(
        "rl: environment tokens have zero probability under structural masking; disable "
        "masking to include them in the loss");
  }
  using Clock = std::chrono::steady_clock;
  RlResult result;
  Policy policy = init;
  const Vocab& vocab = world.vocab();
  const int nq = config.queries_per_iteration;

  std::vector<std::size_t> order(train_queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uint64_t pass = 0;
  auto next_query = [&]() {
    if (cursor == order.size()) {
      Rng rng(derive_seed(config.seed, "rl-order", pass++));
      rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    return order[cursor++];
  };

  struct Group {
    std::size_t query = 0;
    std::vector<Trajectory> trajs;
    std::vector<RewardBundle> rewards;
    AdvantageTable adv;
  };
  std::vector<Group> groups(nq);

  for (int it = 0; it <= config.iterations; ++it) {
    const auto t0 = Clock::now();
    for (auto& g : groups) g.query = next_query();
    parallel_for(groups.size(), config.num_threads, [&](std::size_t j) {
      Group& g = groups[j];
      const auto& q = train_queries[g.query];
      Rng rng(derive_seed(config.seed, "rl-group",
                          static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(nq) + j));
      g.trajs = group_sample(policy, world, q, config.group_size, config.temperature, rng,
                             config.max_steps, config.k_docs);
      g.rewards.clear();
      for (const auto& t : g.trajs) {
        g.rewards.push_back(compute_rewards(t, prm, q.gold_answer, config.nu1, config.nu2));
      }
      g.adv = build_advantages(g.trajs, g.rewards, config.beta, config.sigma_floor,
                               config.step_stats, config.include_env_tokens);
    });

    double sum_out = 0.0, sum_step = 0.0, valid = 0.0;
    std::size_t n_traj = 0, n_step = 0;
    for (const auto& g : groups) {
      for (std::size_t i = 0; i < g.trajs.size(); ++i) {
        sum_out += g.rewards[i].outcome;
        for (double r : g.rewards[i].step) sum_step += r;
        n_step += g.rewards[i].step.size();
        valid += is_traj_valid(g.trajs[i], vocab) ? 1.0 : 0.0;
        ++n_traj;
      }
    }
    std::map<std::string, double> values{
        {"mean_r_out", sum_out / static_cast<double>(n_traj)},
        {"mean_r_step", n_step ? sum_step / static_cast<double>(n_step) : 0.0},
        {"format_rate", valid / static_cast<double>(n_traj)}};

    const bool final_record = it == config.iterations;
    if (!eval_queries.empty() &&
        (final_record || (config.eval_every > 0 && it % config.eval_every == 0))) {
      const EvalOptions eo{config.k_docs, config.max_steps, config.num_threads};
      const EvalResult er = evaluate(policy, world, eval_queries, eo);
      values["eval_em"] = er.em;
      values["eval_f1"] = er.f1;
    }

    if (!final_record) {
      const PolicyParams last_good = policy.params;
      const Policy old_policy = policy;
      std::vector<LossDetail> details(groups.size());
      for (int epoch = 0; epoch < config.epochs_per_round; ++epoch) {
        PolicyParams total = PolicyParams::zeros(policy.params.vocab_size, policy.params.feature_dim);
        std::vector<PolicyParams> grads(groups.size());
        parallel_for(groups.size(), config.num_threads, [&](std::size_t j) {
          details[j] = clipped_loss(policy, groups[j].trajs, groups[j].adv, config.epsilon,
                                    &grads[j], &old_policy);
        });
        for (const auto& g : grads) total.axpy(1.0 / static_cast<double>(groups.size()), g);
        policy.params.axpy(-config.learning_rate, total);
        if (!policy.params.all_finite()) {
          throw DivergenceError("rl: non-finite parameters after the update of iteration " +
                                    std::to_string(it),
                                last_good, it);
        }
      }
      if (hooks.on_group) {
        for (std::size_t j = 0; j < groups.size(); ++j) {
          hooks.on_group(group_dump(it, train_queries[groups[j].query], groups[j].trajs,
                                    groups[j].rewards, groups[j].adv, details[j], vocab));
        }
      }
    }

    values["wall_ms"] =
        config.record_wall_time
            ? std::chrono::duration<double, std::milli>(Clock::now() - t0).count()
            : 0.0;
    result.log.add(it, values);
    if (hooks.on_iteration) hooks.on_iteration(result.log.records().back());
  }
  result.params = policy.params;
  return result;
}

}  // namespace hoplab::rl
