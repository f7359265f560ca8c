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

#ifndef HOPLAB_SYNTH_ENV_HPP_
#define HOPLAB_SYNTH_ENV_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hoplab/rng.hpp"
#include "hoplab/trajectory.hpp"
#include "hoplab/vocab.hpp"

namespace hoplab::env {

struct WorldConfig {
  int num_entities = 50;
  int num_relations = 6;
  int num_distractors = 200;
  int max_hops = 3;
  // Chains of exactly max_hops facts planted over disjoint entities; 0 plants
  // as many as the entity pool allows.
  int planted_chains = 0;
  // Probability that a free (head, relation) slot receives an extra fact.
  double fact_density = 0.15;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

struct Fact {
  int head = 0;
  int relation = 0;
  int tail = 0;
  friend bool operator==(const Fact&, const Fact&) = default;
};

struct Document {
  std::vector<Token> tokens;
  std::optional<int> source_fact;  // absent for distractors
  friend bool operator==(const Document&, const Document&) = default;
};

// Entity-relation graph with functional relations: each (head, relation) has
// at most one tail, so a relation path from an entity has a unique endpoint.
// Immutable after construction.
class World {
 public:
  World(WorldConfig config, std::uint64_t seed, std::vector<Fact> facts,
        std::vector<Document> distractors);

  const WorldConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const Vocab& vocab() const { return vocab_; }
  int num_entities() const { return config_.num_entities; }
  int num_relations() const { return config_.num_relations; }
  int max_hops() const { return config_.max_hops; }

  const std::vector<Fact>& facts() const { return facts_; }
  // documents()[i] verbalizes facts()[i].
  const std::vector<Document>& documents() const { return documents_; }
  const std::vector<Document>& distractors() const { return distractors_; }
  std::size_t pool_size() const { return documents_.size() + distractors_.size(); }

  std::optional<int> find_fact(int head, int relation) const;
  // Fact ids whose head is the given entity, ordered by relation.
  const std::vector<int>& outgoing(int entity) const { return outgoing_[entity]; }

  friend bool operator==(const World& a, const World& b) {
    return a.config_ == b.config_ && a.seed_ == b.seed_ && a.facts_ == b.facts_ &&
           a.distractors_ == b.distractors_;
  }

 private:
  WorldConfig config_;
  std::uint64_t seed_ = 0;
  Vocab vocab_;
  std::vector<Fact> facts_;
  std::vector<Document> documents_;
  std::vector<Document> distractors_;
  std::unordered_map<std::int64_t, int> index_;
  std::vector<std::vector<int>> outgoing_;
};

struct QueryInstance {
  int id = -1;
  // [head entity, relation_1, ..., relation_h]
  std::vector<Token> query_tokens;
  int hop_count = 0;
  std::vector<int> gold_chain;  // fact ids, head-to-tail connected
  std::vector<SubqueryKey> gold_subqueries;
  std::vector<Token> gold_answer;  // a*

  friend bool operator==(const QueryInstance&, const QueryInstance&) = default;
};

World gen_world(const WorldConfig& config, std::uint64_t seed);

// Draws a random chain of the requested length with distinct entities.
QueryInstance gen_query(const World& world, int hops, Rng& rng, int id = 0);

// Top-k documents for (relation, entity). The matching fact, when it exists,
// is ranked first; the rest of the pool is ordered by lexical overlap with the
// subquery tokens, ties broken by pool index (facts before distractors).
std::vector<Document> retrieve(const World& world, const SubqueryKey& subquery, int k);

// Bag-of-tokens F1. Both empty -> 1, exactly one empty -> 0.
double token_f1(const std::vector<Token>& pred, const std::vector<Token>& gold);

std::vector<std::vector<Token>> document_tokens(const std::vector<Document>& docs);

// Planner oracle: executes the gold subqueries in order (plan, subquery,
// retrieval, subanswer per hop) and finishes with the gold answer.
Trajectory oracle_trajectory(const World& world, const QueryInstance& query,
                             int k_docs = 3);

enum class Verdict { kFirst, kSecond, kTie };

// Rule judge over sibling steps of one context. A step is graded 0 when its
// tag schema is broken, 2 when it is the gold-consistent continuation of the
// context (right kind for the workflow position, right relation and entity,
// not a repeat of an earlier subquery, answer only once every hop is
// resolved) and 1 otherwise. Higher grade wins; equal grades tie.
class Judge {
 public:
  Judge(const World& world, const QueryInstance& query)
      : world_(&world), query_(&query) {}

  int grade(const State& context, const Step& step) const;
  Verdict compare(const State& context, const Step& a, const Step& b) const;

 private:
  const World* world_;
  const QueryInstance* query_;
};

// Line-delimited JSON. Object keys are emitted in sorted order, so equal
// worlds serialize to identical bytes.
void write_world(std::ostream& out, const World& world);
World read_world(std::istream& in);
void save_world(const std::string& path, const World& world);
World load_world(const std::string& path);

void write_queries(std::ostream& out, const World& world,
                   const std::vector<QueryInstance>& queries);
std::vector<QueryInstance> read_queries(std::istream& in, const World& world);
void save_queries(const std::string& path, const World& world,
                  const std::vector<QueryInstance>& queries);
std::vector<QueryInstance> load_queries(const std::string& path, const World& world);

}  // namespace hoplab::env

#endif  // HOPLAB_SYNTH_ENV_HPP_
