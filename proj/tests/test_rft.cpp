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

#include <algorithm>
#include <set>

#include "hoplab/error.hpp"
#include "hoplab/harness.hpp"
#include "hoplab/metrics.hpp"
#include "hoplab/rft.hpp"
#include "test_support.hpp"

using namespace hoplab;
using hoplab::testing::random_params;
using hoplab::testing::small_world;

namespace {

prm::PrmModel random_prm(const Vocab& v, Rng& rng) {
  prm::PrmModel m(v);
  for (double& x : m.params.weight) x = 2.0 * rng.uniform() - 1.0;
  m.params.bias = 0.2;
  return m;
}

prm::PrmModel constant_prm(const Vocab& v, double score) {
  prm::PrmModel m(v);
  m.params.bias = score;
  return m;
}

// Key of a retained step: (candidate, position of the step in its trajectory).
std::set<std::pair<int, int>> keys(const std::vector<rft::RetainedStep>& kept) {
  std::set<std::pair<int, int>> out;
  for (const auto& r : kept) out.insert({r.candidate, r.context.step_index()});
  return out;
}

}  // namespace

TEST_CASE("sample_candidates draws N rollouts") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(1);
  const policy::Policy p(f, random_params(f, 0.5, rng));
  const auto q = env::gen_query(w, 2, rng);
  CHECK(rft::sample_candidates(p, w, q, 8, 1.0, rng).size() == 8);
  CHECK(rft::sample_candidates(p, w, q, 1, 1.0, rng).size() == 1);
}

TEST_CASE("greedy candidates are identical") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(2);
  const policy::Policy p(f, random_params(f, 0.5, rng));
  const auto q = env::gen_query(w, 2, rng);
  const auto c = rft::sample_candidates(p, w, q, 8, 0.0, rng);
  for (const auto& t : c) CHECK(t.steps == c.front().steps);
}

TEST_CASE("candidate sampling is deterministic given the seed") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng prng(3);
  const policy::Policy p(f, random_params(f, 0.5, prng));
  const auto q = env::gen_query(w, 3, prng);
  Rng a(7), b(7);
  const auto ca = rft::sample_candidates(p, w, q, 8, 1.0, a);
  const auto cb = rft::sample_candidates(p, w, q, 8, 1.0, b);
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].steps == cb[i].steps);
}

TEST_CASE("a wrong answer contributes nothing") {
  const env::World w = small_world();
  Rng rng(4);
  const auto q = env::gen_query(w, 1, rng);
  Trajectory t = env::oracle_trajectory(w, q);
  Step& answer = t.steps.back();
  answer.tokens[1] = w.vocab().entity_token((w.vocab().entity_of(answer.tokens[1]) + 1) %
                                            w.num_entities());
  CHECK(rft::filter_dual({t}, constant_prm(w.vocab(), 100.0), q.gold_answer, 0.0).empty());
}

TEST_CASE("a low-scoring step is dropped and the others kept") {
  const env::World w = small_world();
  Rng rng(5);
  const auto q = env::gen_query(w, 2, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  const auto prm = random_prm(w.vocab(), rng);
  std::vector<double> scores;
  State ctx(t.query_id, t.query_tokens);
  for (const auto& s : t.steps) {
    if (s.is_policy()) scores.push_back(prm.score(ctx, s));
    ctx.append_step(s);
  }
  const double lowest = *std::min_element(scores.begin(), scores.end());
  const auto at_min = std::count(scores.begin(), scores.end(), lowest);
  const auto kept = rft::filter_dual({t}, prm, q.gold_answer, lowest);
  CHECK(kept.size() == scores.size() - static_cast<std::size_t>(at_min));
  for (const auto& r : kept) CHECK(r.score > lowest);
  // Every step survives a threshold below all scores.
  CHECK(rft::filter_dual({t}, prm, q.gold_answer, lowest - 1.0).size() == scores.size());
}

TEST_CASE("no candidates give no steps") {
  const env::World w = small_world();
  Rng rng(6);
  const auto q = env::gen_query(w, 1, rng);
  CHECK(rft::filter_dual({}, constant_prm(w.vocab(), 1.0), q.gold_answer, 0.0).empty());
}

TEST_CASE("retained steps satisfy both criteria and never hold retrieval tokens") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(7);
  const policy::Policy p(f, policy::oracle_params(f, 3.0));
  const auto prm = random_prm(w.vocab(), rng);
  std::size_t total = 0;
  for (const auto& q : hoplab::testing::queries(w, 2, 20, 8)) {
    const auto cands = rft::sample_candidates(p, w, q, 8, 1.0, rng);
    const auto kept = rft::filter_dual(cands, prm, q.gold_answer, 0.0);
    total += kept.size();
    for (const auto& r : kept) {
      const Trajectory& t = cands.at(r.candidate);
      CHECK(rft::answer_correct(t, q.gold_answer));
      CHECK(r.step.is_policy());
      CHECK(r.score > 0.0);
      CHECK(r.score == prm.score(r.context, r.step));
      const int at = r.context.step_index();
      CHECK(t.steps.at(at) == r.step);
      CHECK(r.context == State::from_steps(t.query_id, t.query_tokens,
                                           {t.steps.begin(), t.steps.begin() + at}));
      for (Provenance pr : r.step.provenance) CHECK(pr == Provenance::kPolicy);
      for (Token tok : r.step.tokens) {
        CHECK(tok != token(Control::kRetrievalOpen));
        CHECK(tok != token(Control::kRetrievalClose));
      }
    }
  }
  CHECK(total > 0);
}

TEST_CASE("raising the threshold never grows the retained set") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(9);
  const policy::Policy p(f, policy::oracle_params(f, 3.0));
  for (const auto& q : hoplab::testing::queries(w, 3, 10, 10)) {
    const auto prm = random_prm(w.vocab(), rng);
    const auto cands = rft::sample_candidates(p, w, q, 8, 1.0, rng);
    std::set<std::pair<int, int>> previous = keys(rft::filter_dual(cands, prm, q.gold_answer, -5.0));
    for (double theta : {-1.0, -0.2, 0.0, 0.3, 1.0, 5.0}) {
      const auto now = keys(rft::filter_dual(cands, prm, q.gold_answer, theta));
      CHECK(std::includes(previous.begin(), previous.end(), now.begin(), now.end()));
      previous = now;
    }
  }
}

TEST_CASE("training requires retained steps") {
  const env::World w = small_world();
  const policy::Policy init(w.vocab());
  CHECK_THROWS_AS((void)rft::train_rft(init, {}, rft::RftConfig{}), Error);
}

TEST_CASE("zero epochs return the initial policy and training is deterministic") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(11);
  const policy::Policy init(f, random_params(f, 0.2, rng));
  const policy::Policy oracle(f, policy::oracle_params(f, 3.0));
  rft::RftConfig cfg;
  cfg.seed = 4;
  const auto kept = rft::collect(oracle, constant_prm(w.vocab(), 1.0), w,
                                 hoplab::testing::queries(w, 2, 10, 12), cfg);
  REQUIRE_FALSE(kept.empty());
  rft::RftConfig none = cfg;
  none.epochs = 0;
  CHECK(rft::train_rft(init, kept, none) == init.params);
  CHECK(rft::train_rft(init, kept, cfg) == rft::train_rft(init, kept, cfg));
  CHECK_FALSE(rft::train_rft(init, kept, cfg) == init.params);
}

TEST_CASE("collect is deterministic and independent of the thread count") {
  const env::World w = small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(13);
  const policy::Policy p(f, policy::oracle_params(f, 2.0));
  const auto prm = random_prm(w.vocab(), rng);
  const auto qs = hoplab::testing::queries(w, 2, 12, 14);
  rft::RftConfig cfg;
  cfg.seed = 5;
  const auto a = rft::collect(p, prm, w, qs, cfg);
  cfg.num_threads = 4;
  const auto b = rft::collect(p, prm, w, qs, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].step == b[i].step);
    CHECK(a[i].context == b[i].context);
    CHECK(a[i].score == b[i].score);
  }
}

TEST_CASE("refining on oracle-quality steps does not hurt held-out 2-hop F1") {
  std::vector<double> sft_f1, rft_f1;
  for (std::uint64_t i = 0; i < 5; ++i) {
    harness::ExperimentConfig c;
    c.seed = derive_seed(17, "rft-suite", i);
    const harness::Data d = harness::make_data(c);
    const policy::Featurizer f(d.world.vocab());
    const policy::Policy sft(f, harness::run_sft(c, d));
    const prm::PrmModel prm(prm::PrmFeaturizer(d.world.vocab()),
                            harness::run_prm(c, d.world.vocab(), harness::run_search(c, d, sft),
                                             nullptr));
    const policy::Policy oracle(f, policy::oracle_params(f));
    rft::RftConfig rc = c.rft;
    rc.seed = c.seed;
    const auto kept = rft::collect(oracle, prm, d.world, d.rft_pool(), rc);
    const policy::Policy refined(f, rft::train_rft(sft, kept, rc));

    std::set<std::vector<Token>> seen;
    for (const auto* pool : {&d.train, &d.rft, &d.rl, &d.eval}) {
      for (const auto& q : *pool) seen.insert(q.query_tokens);
    }
    std::vector<env::QueryInstance> heldout;
    Rng rng(derive_seed(c.seed, "heldout"));
    while (heldout.size() < 60) {
      auto q = env::gen_query(d.world, 2, rng, static_cast<int>(heldout.size()));
      if (seen.insert(q.query_tokens).second) heldout.push_back(q);
    }
    sft_f1.push_back(evaluate(sft, d.world, heldout, {}).f1);
    rft_f1.push_back(evaluate(refined, d.world, heldout, {}).f1);
  }
  MESSAGE("SFT mean F1 " << harness::mean(sft_f1) << ", RFT mean F1 " << harness::mean(rft_f1));
  CHECK(harness::mean(rft_f1) >= harness::mean(sft_f1));
}
