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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "hoplab/error.hpp"
#include "hoplab/harness.hpp"
#include "hoplab/rl.hpp"
#include "test_support.hpp"

using namespace hoplab;
using hoplab::testing::random_params;
using hoplab::testing::small_world;

namespace {

prm::PrmModel constant_prm(const Vocab& v, double score) {
  prm::PrmModel m(v);
  m.params.bias = score;
  return m;
}

// A sampled group from a random policy, with rewards from a random PRM.
struct Group {
  env::World world = small_world();
  policy::Featurizer f{world.vocab()};
  policy::Policy behavior;
  env::QueryInstance query;
  std::vector<Trajectory> trajs;
  std::vector<rl::RewardBundle> rewards;
};

Group sampled_group(std::uint64_t seed, int g = 6) {
  Group out;
  Rng rng(seed);
  out.behavior = policy::Policy(out.f, random_params(out.f, 0.3, rng));
  out.query = env::gen_query(out.world, 2, rng);
  out.trajs = rl::group_sample(out.behavior, out.world, out.query, g, 1.0, rng);
  prm::PrmModel prm(out.world.vocab());
  for (double& x : prm.params.weight) x = 0.5 * (2.0 * rng.uniform() - 1.0);
  for (const auto& t : out.trajs) {
    out.rewards.push_back(rl::compute_rewards(t, prm, out.query.gold_answer, 0.2, 0.5));
  }
  return out;
}

// Independent oracle for the identity-ratio case: -(1/G) sum A log pi.
double weighted_log_likelihood(const policy::Policy& p, const std::vector<Trajectory>& group,
                               const rl::AdvantageTable& adv) {
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    State s(group[i].query_id, group[i].query_tokens);
    std::size_t cursor = 0;
    const auto& toks = adv.trajs[i].tokens;
    for (std::size_t k = 0; k < group[i].steps.size(); ++k) {
      const Step& step = group[i].steps[k];
      for (std::size_t j = 0; j < step.tokens.size(); ++j) {
        if (cursor < toks.size() && toks[cursor].step == static_cast<int>(k) &&
            toks[cursor].pos == static_cast<int>(j)) {
          total += toks[cursor].a_total * policy::log_prob(p, s, step.tokens[j]);
          ++cursor;
        }
        if (step.is_policy()) {
          s.push(step.tokens[j]);
        } else {
          s.push_environment(step.tokens[j]);
        }
      }
    }
  }
  return -total / static_cast<double>(group.size());
}

}  // namespace

TEST_CASE("group_sample draws G trajectories with behavior log-probabilities") {
  Group g = sampled_group(1, 8);
  REQUIRE(g.trajs.size() == 8);
  for (const auto& t : g.trajs) {
    State s(t.query_id, t.query_tokens);
    for (const Step& step : t.steps) {
      for (std::size_t k = 0; k < step.tokens.size(); ++k) {
        if (step.is_policy()) {
          REQUIRE(step.behavior_logprob.size() == step.tokens.size());
          CHECK(std::abs(step.behavior_logprob[k] -
                         policy::log_prob(g.behavior, s, step.tokens[k])) < 1e-12);
          s.push(step.tokens[k]);
        } else {
          s.push_environment(step.tokens[k]);
        }
      }
    }
  }
}

TEST_CASE("greedy groups are identical") {
  Group g = sampled_group(2);
  Rng rng(3);
  const auto greedy = rl::group_sample(g.behavior, g.world, g.query, 8, 0.0, rng);
  for (const auto& t : greedy) CHECK(t.steps == greedy.front().steps);
  CHECK_THROWS_AS((void)rl::group_sample(g.behavior, g.world, g.query, 1, 1.0, rng), Error);
}

TEST_CASE("step reward adds the format bonus to the PRM score") {
  const env::World w = small_world();
  Rng rng(4);
  const auto q = env::gen_query(w, 1, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  const State ctx(q.id, q.query_tokens);
  const prm::PrmModel prm = constant_prm(w.vocab(), 0.4);
  CHECK(std::abs(rl::step_reward(prm, ctx, t.steps[0], 0.2) - 0.6) < 1e-12);
  Step broken = t.steps[0];
  broken.tokens.pop_back();
  broken.provenance.pop_back();
  broken.kind = StepKind::kMalformed;
  CHECK(std::abs(rl::step_reward(prm, ctx, broken, 0.2) - 0.4) < 1e-12);
  CHECK(rl::step_reward(prm, ctx, t.steps[0], 0.0) == prm.score(ctx, t.steps[0]));
}

TEST_CASE("outcome reward hand values") {
  const env::World w = small_world();
  const Vocab& v = w.vocab();
  Rng rng(5);
  const auto q = env::gen_query(w, 1, rng);
  const Trajectory gold = env::oracle_trajectory(w, q);
  CHECK(std::abs(rl::outcome_reward(gold, q.gold_answer, v, 0.5) - 1.5) < 1e-12);

  Trajectory empty;
  empty.query_id = q.id;
  empty.query_tokens = q.query_tokens;
  CHECK(rl::outcome_reward(empty, q.gold_answer, v, 0.5) == 0.0);

  // Three answer entities, one of them gold: precision 1/3, recall 1, F1 1/2.
  Trajectory wide = gold;
  Step& ans = wide.steps.back();
  const int g0 = v.entity_of(q.gold_answer.front());
  const int n = w.num_entities();
  ans.tokens = {token(Control::kAnswerOpen), v.entity_token(g0), v.entity_token((g0 + 1) % n),
                v.entity_token((g0 + 2) % n), token(Control::kAnswerClose)};
  ans.provenance.assign(ans.tokens.size(), Provenance::kPolicy);
  ans.behavior_logprob.assign(ans.tokens.size(), 0.0);
  REQUIRE(is_traj_valid(wide, v));
  CHECK(std::abs(rl::outcome_reward(wide, q.gold_answer, v, 0.5) - 1.0) < 1e-12);
}

TEST_CASE("normalize_group hand values") {
  const auto a = rl::normalize_group({1, 0, 0, 1}, 1e-6);
  const std::vector<double> want{1, -1, -1, 1};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(a[i] - want[i]) < 1e-12);
  for (double x : rl::normalize_group({0.7, 0.7, 0.7}, 1e-6)) CHECK(x == 0.0);
  const auto b = rl::normalize_group({1, 0}, 1e-6);
  CHECK(std::abs(b[0] - 1.0) < 1e-12);
  CHECK(std::abs(b[1] + 1.0) < 1e-12);
  CHECK_THROWS_AS((void)rl::normalize_group({1.0}, 1e-6), Error);
  CHECK_THROWS_AS((void)rl::normalize_group({}, 1e-6), Error);
}

TEST_CASE("normalized values have mean zero and unit deviation") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng.uniform_int(10));
    for (double& x : v) x = 5.0 * rng.uniform() - 2.0;
    const auto a = rl::normalize_group(v, 1e-9);
    const double mu = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mu) * (x - mu);
    CHECK(std::abs(mu) < 1e-12);
    CHECK(std::abs(std::sqrt(var / static_cast<double>(a.size())) - 1.0) < 1e-9);
  }
}

TEST_CASE("advantage hand example with pooled step statistics") {
  const env::World w = small_world();
  Rng rng(7);
  const auto q = env::gen_query(w, 1, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  REQUIRE(t.policy_step_count() == 4);
  const std::vector<Trajectory> group{t, t};
  // Pooled {1,0,1,0,0,0,0,0}: mean 1/4, deviation sqrt(3)/4.
  const std::vector<rl::RewardBundle> rewards{{{1, 0, 1, 0}, 1.5}, {{0, 0, 0, 0}, 0.5}};
  const double hi = std::sqrt(3.0), lo = -1.0 / std::sqrt(3.0);
  const auto adv = rl::build_advantages(group, rewards, 0.3, 1e-6);
  CHECK(adv.trajs[0].a_out == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(adv.trajs[1].a_out == doctest::Approx(-1.0).epsilon(1e-12));
  const std::vector<double> want0{hi, lo, hi, lo};
  for (int s = 0; s < 4; ++s) {
    CHECK(std::abs(adv.trajs[0].step_proc[s] - want0[s]) < 1e-12);
    CHECK(std::abs(adv.trajs[1].step_proc[s] - lo) < 1e-12);
  }
  const auto& first = adv.trajs[0].tokens.front();
  CHECK(first.step == 0);
  CHECK(std::abs(first.a_total - (1.0 + 0.3 * hi)) < 1e-12);

  // One-hop oracle: plan 3, subquery 4, retrieval skipped, subanswer 3, answer 3.
  int policy_tokens = 0;
  for (const Step& s : t.steps) policy_tokens += s.is_policy() ? static_cast<int>(s.tokens.size()) : 0;
  CHECK(static_cast<int>(adv.trajs[0].tokens.size()) == policy_tokens);
}

TEST_CASE("deviations under the floor: a_out 0.7, a_proc 0.5, total 0.85") {
  const env::World w = small_world();
  Rng rng(8);
  const auto q = env::gen_query(w, 1, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  const std::vector<Trajectory> group{t, t};
  // Both deviations (0.07 and 0.05) fall below the floor of 0.1.
  const std::vector<rl::RewardBundle> rewards{{{0.05, 0.05, 0.05, 0.05}, 0.07},
                                              {{-0.05, -0.05, -0.05, -0.05}, -0.07}};
  const auto adv = rl::build_advantages(group, rewards, 0.3, 0.1);
  for (const auto& tok : adv.trajs[0].tokens) {
    CHECK(std::abs(tok.a_out - 0.7) < 1e-12);
    CHECK(std::abs(tok.a_proc - 0.5) < 1e-12);
    CHECK(std::abs(tok.a_total - 0.85) < 1e-12);
  }
  for (const auto& tok : adv.trajs[1].tokens) CHECK(std::abs(tok.a_total + 0.85) < 1e-12);
}

TEST_CASE("beta = 0 reduces to outcome-only advantages") {
  Group g = sampled_group(9);
  const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.0, 1e-6);
  std::vector<double> outcomes;
  for (const auto& r : g.rewards) outcomes.push_back(r.outcome);
  const auto a_out = rl::normalize_group(outcomes, 1e-6);
  for (std::size_t i = 0; i < g.trajs.size(); ++i) {
    for (const auto& tok : adv.trajs[i].tokens) CHECK(tok.a_total == a_out[i]);
  }
}

TEST_CASE("step advantages are broadcast to every token of the step") {
  Group g = sampled_group(10);
  const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.3, 1e-6);
  for (std::size_t i = 0; i < g.trajs.size(); ++i) {
    std::vector<int> policy_index(g.trajs[i].steps.size(), -1);
    int n = 0;
    for (std::size_t s = 0; s < g.trajs[i].steps.size(); ++s) {
      if (g.trajs[i].steps[s].is_policy()) policy_index[s] = n++;
    }
    std::size_t scored = 0;
    for (const auto& tok : adv.trajs[i].tokens) {
      REQUIRE(policy_index[tok.step] >= 0);
      CHECK(tok.a_proc == adv.trajs[i].step_proc[policy_index[tok.step]]);
      ++scored;
    }
    std::size_t expected = 0;
    for (const Step& s : g.trajs[i].steps) expected += s.is_policy() ? s.tokens.size() : 0;
    CHECK(scored == expected);
  }
}

TEST_CASE("pooled step advantages have mean zero and unit deviation") {
  for (std::uint64_t seed = 11; seed < 21; ++seed) {
    Group g = sampled_group(seed);
    const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.3, 1e-9);
    std::vector<double> all;
    for (const auto& t : adv.trajs) all.insert(all.end(), t.step_proc.begin(), t.step_proc.end());
    if (all.size() < 2 || adv.sigma_step == 0.0) continue;
    const double mu = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    double var = 0.0;
    for (double x : all) var += (x - mu) * (x - mu);
    CHECK(std::abs(mu) < 1e-12);
    CHECK(std::abs(std::sqrt(var / static_cast<double>(all.size())) - 1.0) < 1e-9);
  }
}

TEST_CASE("total advantage is linear in beta") {
  Group g = sampled_group(21);
  const auto a0 = rl::build_advantages(g.trajs, g.rewards, 0.0, 1e-6);
  const auto a1 = rl::build_advantages(g.trajs, g.rewards, 1.0, 1e-6);
  const auto ab = rl::build_advantages(g.trajs, g.rewards, 0.45, 1e-6);
  for (std::size_t i = 0; i < g.trajs.size(); ++i) {
    for (std::size_t k = 0; k < ab.trajs[i].tokens.size(); ++k) {
      const double want = a0.trajs[i].tokens[k].a_total +
                          0.45 * (a1.trajs[i].tokens[k].a_total - a0.trajs[i].tokens[k].a_total);
      CHECK(std::abs(ab.trajs[i].tokens[k].a_total - want) < 1e-12);
    }
  }
}

TEST_CASE("misaligned rewards are rejected") {
  Group g = sampled_group(22);
  auto rewards = g.rewards;
  rewards[0].step.push_back(0.0);
  CHECK_THROWS_AS((void)rl::build_advantages(g.trajs, rewards, 0.3, 1e-6), Error);
  rewards.pop_back();
  CHECK_THROWS_AS((void)rl::build_advantages(g.trajs, rewards, 0.3, 1e-6), Error);
}

TEST_CASE("surrogate hand values and clip bound") {
  CHECK(std::abs(rl::surrogate_term(2.0, -1.0, 0.2) - -2.0) < 1e-12);
  CHECK(std::abs(rl::surrogate_term(1.5, 1.0, 0.2) - 1.2) < 1e-12);
  CHECK(std::abs(rl::surrogate_term(0.5, -1.0, 0.2) - -0.8) < 1e-12);
  CHECK(rl::surrogate_term(1.0, 0.7, 0.2) == 0.7);
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    const double rho = 3.0 * rng.uniform();
    const double a = 4.0 * rng.uniform() - 2.0;
    const double s = rl::surrogate_term(rho, a, 0.2);
    CHECK(s <= rho * a + 1e-15);
    CHECK(s <= std::clamp(rho, 0.8, 1.2) * a + 1e-15);
    if (a > 0) CHECK(s <= 1.2 * a + 1e-15);
  }
}

TEST_CASE("at identity ratios the gradient is the vanilla policy gradient") {
  Group g = sampled_group(24);
  const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.3, 1e-6);
  policy::PolicyParams grad;
  const auto detail = rl::clipped_loss(g.behavior, g.trajs, adv, 0.2, &grad);
  for (const auto& r : detail.rho) {
    for (double x : r) CHECK(std::abs(x - 1.0) < 1e-12);
  }
  std::function<double(const policy::PolicyParams&)> fn = [&](const policy::PolicyParams& x) {
    return weighted_log_likelihood(policy::Policy(g.f, x), g.trajs, adv);
  };
  Rng rng(25);
  CHECK(hoplab::testing::fd_relative_error(g.behavior.params, grad, fn, rng) < 1e-6);

  // Exact assembly from per-token log-likelihood gradients.
  policy::PolicyParams want = policy::PolicyParams::zeros(grad.vocab_size, grad.feature_dim);
  const double inv_g = 1.0 / static_cast<double>(g.trajs.size());
  for (std::size_t i = 0; i < g.trajs.size(); ++i) {
    const Trajectory& t = g.trajs[i];
    State s(t.query_id, t.query_tokens);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < t.steps.size(); ++k) {
      for (std::size_t j = 0; j < t.steps[k].tokens.size(); ++j) {
        const Token tok = t.steps[k].tokens[j];
        if (t.steps[k].is_policy()) {
          policy::accumulate_log_prob_grad(policy::evaluate(g.behavior, s), tok,
                                           -inv_g * adv.trajs[i].tokens[cursor++].a_total, want);
          s.push(tok);
        } else {
          s.push_environment(tok);
        }
      }
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    worst = std::max(worst, std::abs(want.flat(i) - grad.flat(i)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("clipped loss gradient matches central differences away from the clip kinks") {
  double worst = 0.0;
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    Group g = sampled_group(seed);
    const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.3, 1e-6);
    Rng rng(seed);
    policy::PolicyParams moved = g.behavior.params;
    for (std::size_t i = 0; i < moved.size(); ++i) moved.flat(i) += 0.02 * (2.0 * rng.uniform() - 1.0);
    const policy::Policy current(g.f, moved);
    const auto detail = rl::clipped_loss(current, g.trajs, adv, 0.2);
    bool near_kink = false;
    for (const auto& r : detail.rho) {
      for (double x : r) near_kink |= std::abs(x - 0.8) < 1e-3 || std::abs(x - 1.2) < 1e-3;
    }
    if (near_kink) continue;
    policy::PolicyParams grad;
    (void)rl::clipped_loss(current, g.trajs, adv, 0.2, &grad);
    std::function<double(const policy::PolicyParams&)> fn = [&](const policy::PolicyParams& x) {
      return rl::clipped_loss(policy::Policy(g.f, x), g.trajs, adv, 0.2).loss;
    };
    worst = std::max(worst, hoplab::testing::fd_relative_error(moved, grad, fn, rng));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("environment tokens never reach the loss") {
  Group g = sampled_group(41);
  const auto adv = rl::build_advantages(g.trajs, g.rewards, 0.3, 1e-6);
  policy::PolicyParams grad;
  const double base = rl::clipped_loss(g.behavior, g.trajs, adv, 0.2, &grad).loss;
  // This feature is active only while a retrieval block is open, i.e. only
  // when the next token is written by the environment.
  const int slot = g.f.layout().partial_kind + 1 + static_cast<int>(StepKind::kRetrieval);
  policy::PolicyParams moved = g.behavior.params;
  for (Token t = 0; t < moved.vocab_size; ++t) {
    moved.w(slot, t) += 3.0 * std::sin(1.0 + t);
    CHECK(grad.w(slot, t) == 0.0);
  }
  CHECK(rl::clipped_loss(policy::Policy(g.f, moved), g.trajs, adv, 0.2).loss == base);
}

TEST_CASE("zero iterations return the initial policy; training is deterministic") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(42);
  const policy::Policy init(f, random_params(f, 0.2, rng));
  const prm::PrmModel prm = constant_prm(w.vocab(), 0.1);
  const auto train = hoplab::testing::queries(w, 2, 16, 43);
  const auto eval = hoplab::testing::queries(w, 2, 8, 44);
  rl::RlConfig cfg;
  cfg.iterations = 0;
  cfg.seed = 1;
  CHECK(rl::train_rl(init, prm, w, train, eval, cfg).params == init.params);
  cfg.iterations = 5;
  cfg.queries_per_iteration = 4;
  const auto a = rl::train_rl(init, prm, w, train, eval, cfg);
  const auto b = rl::train_rl(init, prm, w, train, eval, cfg);
  CHECK(a.params == b.params);
  CHECK(a.log.to_csv(rl::kMetricColumns) == b.log.to_csv(rl::kMetricColumns));
  CHECK_FALSE(a.params == init.params);
}

TEST_CASE("from the refined policy, outcome reward rises on 3-hop tasks") {
  int improved = 0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    harness::ExperimentConfig c;
    c.seed = derive_seed(23, "rl-suite", i);
    const harness::Data d = harness::make_data(c);
    const policy::Featurizer f(d.world.vocab());
    const policy::Policy sft(f, harness::run_sft(c, d));
    const prm::PrmModel prm(prm::PrmFeaturizer(d.world.vocab()),
                            harness::run_prm(c, d.world.vocab(), harness::run_search(c, d, sft),
                                             nullptr));
    rft::RftConfig rc = c.rft;
    rc.seed = derive_seed(c.seed, "rft");
    const policy::Policy refined(f, rft::train_rft(sft, rft::collect(sft, prm, d.world,
                                                                    d.rft_pool(), rc), rc));
    const auto res = harness::run_rl(c, d, refined, prm, 0.3);
    const auto r_out = res.log.series("mean_r_out");
    REQUIRE(r_out.size() >= 2);
    MESSAGE("seed " << i << ": mean r_out " << r_out.front().second << " -> " << r_out.back().second);
    improved += r_out.back().second > r_out.front().second ? 1 : 0;
  }
  CHECK(improved >= 4);
}
