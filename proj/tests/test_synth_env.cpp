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

#include <set>
#include <sstream>

#include "hoplab/error.hpp"
#include "hoplab/metrics.hpp"
#include "hoplab/synth_env.hpp"
#include "test_support.hpp"

using namespace hoplab;
using hoplab::testing::small_world;

namespace {

env::WorldConfig config_50_6_3() {
  env::WorldConfig c;
  c.num_entities = 50;
  c.num_relations = 6;
  c.max_hops = 3;
  return c;
}

std::string serialize(const env::World& w) {
  std::ostringstream out;
  env::write_world(out, w);
  return out.str();
}

Step make_step(StepKind kind, std::vector<Token> tokens) {
  Step s;
  s.kind = kind;
  s.tokens = std::move(tokens);
  s.provenance.assign(s.tokens.size(), Provenance::kPolicy);
  return s;
}

}  // namespace

TEST_CASE("gen_world plants chains of max_hops") {
  const env::World w = env::gen_world(config_50_6_3(), 7);
  Rng rng(1);
  const auto q = env::gen_query(w, 3, rng);
  CHECK(q.hop_count == 3);
  CHECK(q.gold_chain.size() == 3);
}

TEST_CASE("gen_world is deterministic in config and seed") {
  CHECK(serialize(env::gen_world(config_50_6_3(), 7)) ==
        serialize(env::gen_world(config_50_6_3(), 7)));
  CHECK(serialize(env::gen_world(config_50_6_3(), 7)) !=
        serialize(env::gen_world(config_50_6_3(), 8)));
}

TEST_CASE("gen_world rejects a pool too small for a chain") {
  env::WorldConfig c;
  c.num_entities = 2;
  c.num_relations = 1;
  c.max_hops = 3;
  try {
    (void)env::gen_world(c, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasible);
  }
}

TEST_CASE("world facts are functional and documents verbalize them") {
  const env::World w = small_world();
  std::set<std::pair<int, int>> keys;
  for (std::size_t i = 0; i < w.facts().size(); ++i) {
    const auto& f = w.facts()[i];
    CHECK(keys.insert({f.head, f.relation}).second);
    CHECK(w.find_fact(f.head, f.relation) == static_cast<int>(i));
    CHECK(w.documents()[i].source_fact == static_cast<int>(i));
    CHECK_FALSE(w.documents()[i].tokens.empty());
  }
  for (const auto& d : w.distractors()) {
    CHECK_FALSE(d.source_fact.has_value());
    CHECK_FALSE(d.tokens.empty());
  }
}

TEST_CASE("world round-trips through its text format") {
  const env::World w = small_world();
  std::istringstream in(serialize(w));
  const env::World back = env::read_world(in);
  CHECK(back == w);
  CHECK(serialize(back) == serialize(w));
}

TEST_CASE("gen_query with one hop answers with the tail of its fact") {
  const env::World w = small_world();
  Rng rng(3);
  const auto q = env::gen_query(w, 1, rng);
  REQUIRE(q.gold_chain.size() == 1);
  const auto& f = w.facts()[q.gold_chain[0]];
  CHECK(q.gold_answer == std::vector<Token>{w.vocab().entity_token(f.tail)});
  CHECK(q.query_tokens.size() == 2);
}

TEST_CASE("three-hop gold subqueries retrieve the whole chain in order") {
  const env::World w = small_world();
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = env::gen_query(w, 3, rng);
    REQUIRE(q.gold_subqueries.size() == 3);
    int bridge = w.vocab().entity_of(q.query_tokens[0]);
    for (int h = 0; h < 3; ++h) {
      const SubqueryKey key = q.gold_subqueries[h];
      CHECK(key.entity == bridge);
      const auto docs = env::retrieve(w, key, 3);
      REQUIRE_FALSE(docs.empty());
      CHECK(docs[0].source_fact == q.gold_chain[h]);
      bridge = w.facts()[*docs[0].source_fact].tail;
    }
    CHECK(q.gold_answer == std::vector<Token>{w.vocab().entity_token(bridge)});
  }
}

TEST_CASE("gen_query beyond max_hops is an error") {
  env::WorldConfig c;
  c.num_entities = 40;
  c.num_relations = 4;
  c.max_hops = 5;
  const env::World w = env::gen_world(c, 2);
  Rng rng(0);
  CHECK_THROWS_AS((void)env::gen_query(w, 6, rng), Error);
}

TEST_CASE("gen_query is deterministic given the rng state") {
  const env::World w = small_world();
  Rng a(99), b(99);
  for (int i = 0; i < 10; ++i) CHECK(env::gen_query(w, 2, a, i) == env::gen_query(w, 2, b, i));
}

TEST_CASE("retrieve ranks the matching fact first for every k") {
  const env::World w = small_world();
  for (std::size_t i = 0; i < w.facts().size(); ++i) {
    const auto& f = w.facts()[i];
    for (int k = 1; k <= 5; ++k) {
      const auto docs = env::retrieve(w, {f.relation, f.head}, k);
      REQUIRE(docs.size() == std::min<std::size_t>(k, w.pool_size()));
      CHECK(docs[0].source_fact == static_cast<int>(i));
    }
  }
}

TEST_CASE("retrieve without a matching fact returns near misses only") {
  const env::World w = small_world();
  int checked = 0;
  for (int e = 0; e < w.num_entities() && checked < 10; ++e) {
    for (int r = 0; r < w.num_relations(); ++r) {
      if (w.find_fact(e, r)) continue;
      const auto docs = env::retrieve(w, {r, e}, 3);
      CHECK(docs.size() == 3);
      for (const auto& d : docs) {
        if (!d.source_fact) continue;
        const auto& f = w.facts()[*d.source_fact];
        CHECK_FALSE((f.head == e && f.relation == r));
      }
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("retrieve is rank-stable across k") {
  const env::World w = small_world();
  const auto& f = w.facts().front();
  const auto k1 = env::retrieve(w, {f.relation, f.head}, 1);
  const auto k5 = env::retrieve(w, {f.relation, f.head}, 5);
  CHECK(k1[0] == k5[0]);
  const auto k3 = env::retrieve(w, {f.relation, f.head}, 3);
  for (int i = 0; i < 3; ++i) CHECK(k3[i] == k5[i]);
}

TEST_CASE("token_f1 examples") {
  const Token barack = 1, obama = 2, paris = 3, london = 4;
  CHECK(env::token_f1({barack, obama}, {barack, obama}) == 1.0);
  CHECK(std::abs(env::token_f1({obama}, {barack, obama}) - 2.0 / 3.0) < 1e-9);
  CHECK(env::token_f1({paris}, {london}) == 0.0);
  CHECK(env::token_f1({}, {}) == 1.0);
  CHECK(env::token_f1({paris}, {}) == 0.0);
  CHECK(env::token_f1({}, {paris}) == 0.0);
}

TEST_CASE("token_f1 counts repeated tokens as a bag") {
  // pred {a, a, b}, gold {a, b, b}: overlap 2, P = R = 2/3.
  CHECK(std::abs(env::token_f1({1, 1, 2}, {1, 2, 2}) - 2.0 / 3.0) < 1e-12);
}

TEST_CASE("token_f1 is symmetric on equal lengths and bounded") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    const int m = rng.uniform() < 0.5 ? n : 1 + static_cast<int>(rng.uniform_int(4));
    std::vector<Token> a, b;
    for (int k = 0; k < n; ++k) a.push_back(static_cast<Token>(rng.uniform_int(5)));
    for (int k = 0; k < m; ++k) b.push_back(static_cast<Token>(rng.uniform_int(5)));
    const double f = env::token_f1(a, b);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    if (n == m) CHECK(f == env::token_f1(b, a));
  }
}

TEST_CASE("oracle trajectory on a 1-hop query") {
  const env::World w = small_world();
  Rng rng(4);
  const auto q = env::gen_query(w, 1, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  int subqueries = 0;
  for (const auto& s : t.steps) subqueries += s.kind == StepKind::kSubquery;
  CHECK(subqueries == 1);
  CHECK(t.steps.back().kind == StepKind::kAnswer);
  CHECK(t.answer() == q.gold_answer);
}

TEST_CASE("oracle trajectory on a 3-hop query resolves every bridge") {
  const env::World w = small_world();
  Rng rng(8);
  const auto q = env::gen_query(w, 3, rng);
  const Trajectory t = env::oracle_trajectory(w, q);
  std::vector<Token> subanswers;
  int subqueries = 0;
  for (const auto& s : t.steps) {
    subqueries += s.kind == StepKind::kSubquery;
    if (s.kind == StepKind::kSubanswer) subanswers.push_back(s.interior().at(0));
  }
  CHECK(subqueries == 3);
  REQUIRE(subanswers.size() == 3);
  for (int h = 0; h < 3; ++h) {
    CHECK(subanswers[h] == w.vocab().entity_token(w.facts()[q.gold_chain[h]].tail));
  }
}

TEST_CASE("every oracle trajectory is well formed and solves its query") {
  const env::World w = small_world();
  Rng rng(12);
  for (int hops = 1; hops <= 3; ++hops) {
    for (int i = 0; i < 30; ++i) {
      const auto q = env::gen_query(w, hops, rng, i);
      const Trajectory t = env::oracle_trajectory(w, q);
      for (const auto& s : t.steps) CHECK(is_step_valid(s, w.vocab()));
      CHECK(is_traj_valid(t, w.vocab()));
      CHECK(answer_f1(t, q.gold_answer) == 1.0);
      for (const auto& s : t.steps) {
        const Provenance want = s.is_policy() ? Provenance::kPolicy : Provenance::kEnvironment;
        for (Provenance p : s.provenance) CHECK(p == want);
      }
    }
  }
}

TEST_CASE("judge prefers the gold-consistent step") {
  const env::World w = small_world();
  Rng rng(21);
  const auto q = env::gen_query(w, 2, rng);
  const env::Judge judge(w, q);
  const Vocab& v = w.vocab();
  const Trajectory oracle = env::oracle_trajectory(w, q);

  // Context: the plan step of hop 1.
  State ctx(q.id, q.query_tokens);
  ctx.append_step(oracle.steps[0]);
  const Step gold = oracle.steps[1];
  REQUIRE(gold.kind == StepKind::kSubquery);
  const int rel = q.gold_subqueries[0].relation;
  const int off_entity = (q.gold_subqueries[0].entity + 1) % w.num_entities();
  const Step off = make_step(StepKind::kSubquery,
                             {token(Control::kSubqueryOpen), v.relation_token(rel),
                              v.entity_token(off_entity), token(Control::kSubqueryClose)});
  CHECK(judge.compare(ctx, gold, off) == env::Verdict::kFirst);
  CHECK(judge.compare(ctx, off, gold) == env::Verdict::kSecond);
  CHECK(judge.compare(ctx, gold, gold) == env::Verdict::kTie);
}

TEST_CASE("judge rejects a repeated subquery") {
  const env::World w = small_world();
  Rng rng(22);
  const auto q = env::gen_query(w, 2, rng);
  const env::Judge judge(w, q);
  const Trajectory oracle = env::oracle_trajectory(w, q);
  // Steps: plan, subquery, retrieval, subanswer, plan, subquery(hop 2), ...
  State ctx(q.id, q.query_tokens);
  for (int i = 0; i < 5; ++i) ctx.append_step(oracle.steps[i]);
  const Step gold = oracle.steps[5];
  const Step repeat = oracle.steps[1];
  REQUIRE(gold.kind == StepKind::kSubquery);
  CHECK(judge.compare(ctx, gold, repeat) == env::Verdict::kFirst);
}

TEST_CASE("judge grades malformed steps lowest") {
  const env::World w = small_world();
  Rng rng(23);
  const auto q = env::gen_query(w, 1, rng);
  const env::Judge judge(w, q);
  const State ctx(q.id, q.query_tokens);
  const Step broken = make_step(StepKind::kPlan, {token(Control::kStepOpen)});
  const Step plan = env::oracle_trajectory(w, q).steps[0];
  CHECK(judge.grade(ctx, broken) == 0);
  CHECK(judge.grade(ctx, plan) == 2);
}

TEST_CASE("query sets round-trip") {
  const env::World w = small_world();
  const auto qs = hoplab::testing::queries(w, 2, 5, 3);
  std::ostringstream out;
  env::write_queries(out, w, qs);
  std::istringstream in(out.str());
  CHECK(env::read_queries(in, w) == qs);
}
