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

#include "hoplab/synth_env.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <tuple>

#include "hoplab/error.hpp"
#include "json.hpp"

namespace hoplab::env {
namespace {

using nlohmann::json;

constexpr int kWorldFormat = 1;
constexpr int kExactMatchScore = 100;

std::int64_t slot_key(int head, int relation) {
  return static_cast<std::int64_t>(head) * 1024 + relation;
}

Document fact_document(const Vocab& vocab, const Fact& f, int id) {
  return Document{{vocab.entity_token(f.head), vocab.relation_token(f.relation),
                   vocab.entity_token(f.tail)},
                  id};
}

void validate(const WorldConfig& c) {
  if (c.max_hops < 1 || c.max_hops > 5) {
    throw InvalidArgument("gen_world: max_hops must be in [1, 5]");
  }
  if (c.num_relations < 1 || c.num_relations > 1000) {
    throw InvalidArgument("gen_world: relation count must be in [1, 1000]");
  }
  if (c.num_distractors < 0) throw InvalidArgument("gen_world: negative distractor count");
  if (c.fact_density < 0.0 || c.fact_density > 1.0) {
    throw InvalidArgument("gen_world: fact_density must be in [0, 1]");
  }
  if (c.num_entities < 2 * c.max_hops) {
    throw Infeasible("gen_world: chain infeasible, " + std::to_string(c.num_entities) +
                     " entities cannot embed a " + std::to_string(c.max_hops) +
                     "-hop chain (need >= " + std::to_string(2 * c.max_hops) + ")");
  }
}

// Depth-first enumeration of simple paths of exactly `hops` facts.
void enumerate_paths(const World& world, int hops, std::vector<int>& path,
                     std::vector<char>& visited, int entity,
                     std::vector<std::vector<int>>& out) {
  if (static_cast<int>(path.size()) == hops) {
    out.push_back(path);
    return;
  }
  for (int fid : world.outgoing(entity)) {
    const int tail = world.facts()[fid].tail;
    if (visited[tail]) continue;
    visited[tail] = 1;
    path.push_back(fid);
    enumerate_paths(world, hops, path, visited, tail, out);
    path.pop_back();
    visited[tail] = 0;
  }
}

QueryInstance make_query(const World& world, const std::vector<int>& chain, int id) {
  const Vocab& v = world.vocab();
  QueryInstance q;
  q.id = id;
  q.hop_count = static_cast<int>(chain.size());
  q.gold_chain = chain;
  q.query_tokens.push_back(v.entity_token(world.facts()[chain.front()].head));
  for (int fid : chain) {
    const Fact& f = world.facts()[fid];
    q.query_tokens.push_back(v.relation_token(f.relation));
    q.gold_subqueries.push_back({f.relation, f.head});
  }
  q.gold_answer = {v.entity_token(world.facts()[chain.back()].tail)};
  return q;
}

int overlap_score(const Vocab& v, const std::vector<Token>& doc, const SubqueryKey& sq) {
  int score = 0;
  for (Token t : doc) {
    if (sq.relation >= 0 && v.is_relation(t) && v.relation_of(t) == sq.relation) ++score;
    if (sq.entity >= 0 && v.is_entity(t) && v.entity_of(t) == sq.entity) ++score;
  }
  return score;
}

// Kind the gold workflow expects after the context, ignoring malformed steps.
StepKind expected_kind(const State& context, int subanswers, int hops) {
  const StepKind* last = nullptr;
  for (const auto& s : context.steps()) {
    if (s.kind != StepKind::kMalformed) last = &s.kind;
  }
  if (last == nullptr || *last == StepKind::kSubanswer) {
    return subanswers < hops ? StepKind::kPlan : StepKind::kAnswer;
  }
  switch (*last) {
    case StepKind::kPlan: return StepKind::kSubquery;
    case StepKind::kSubquery:
    case StepKind::kRetrieval: return StepKind::kSubanswer;
    default: return StepKind::kAnswer;
  }
}

json world_config_json(const WorldConfig& c) {
  return json{{"num_entities", c.num_entities},       {"num_relations", c.num_relations},
              {"num_distractors", c.num_distractors}, {"max_hops", c.max_hops},
              {"planted_chains", c.planted_chains},   {"fact_density", c.fact_density}};
}

std::vector<std::string> token_names(const Vocab& v, const std::vector<Token>& t) {
  return v.names(t);
}

}  // namespace

World::World(WorldConfig config, std::uint64_t seed, std::vector<Fact> facts,
             std::vector<Document> distractors)
    : config_(config),
      seed_(seed),
      vocab_(config.num_relations, config.num_entities),
      facts_(std::move(facts)),
      distractors_(std::move(distractors)),
      outgoing_(config.num_entities) {
  documents_.reserve(facts_.size());
  for (int i = 0; i < static_cast<int>(facts_.size()); ++i) {
    const Fact& f = facts_[i];
    if (f.head < 0 || f.head >= config.num_entities || f.tail < 0 ||
        f.tail >= config.num_entities || f.relation < 0 ||
        f.relation >= config.num_relations) {
      throw FormatError("world: fact " + std::to_string(i) + " out of range");
    }
    if (!index_.emplace(slot_key(f.head, f.relation), i).second) {
      throw FormatError("world: duplicate (head, relation) in fact " + std::to_string(i));
    }
    documents_.push_back(fact_document(vocab_, f, i));
    outgoing_[f.head].push_back(i);
  }
  for (auto& out : outgoing_) {
    std::sort(out.begin(), out.end(), [this](int a, int b) {
      return facts_[a].relation < facts_[b].relation;
    });
  }
  for (const auto& d : distractors_) {
    if (d.tokens.empty() || d.source_fact.has_value()) {
      throw FormatError("world: malformed distractor document");
    }
  }
}

std::optional<int> World::find_fact(int head, int relation) const {
  if (head < 0 || relation < 0) return std::nullopt;
  auto it = index_.find(slot_key(head, relation));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

World gen_world(const WorldConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(derive_seed(seed, "world"));
  const int n_ent = config.num_entities;
  const int n_rel = config.num_relations;
  const int chain_len = config.max_hops + 1;
  const int max_chains = n_ent / chain_len;
  int chains = config.planted_chains > 0 ? config.planted_chains : max_chains;
  if (chains > max_chains) {
    throw Infeasible("gen_world: cannot plant " + std::to_string(chains) +
                     " disjoint chains over " + std::to_string(n_ent) + " entities");
  }

  std::vector<int> perm(n_ent);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());

  std::vector<Fact> facts;
  std::set<std::int64_t> used;
  for (int c = 0; c < chains; ++c) {
    for (int j = 0; j < config.max_hops; ++j) {
      const int head = perm[c * chain_len + j];
      const int tail = perm[c * chain_len + j + 1];
      const int rel = static_cast<int>(rng.uniform_int(n_rel));
      facts.push_back({head, rel, tail});
      used.insert(slot_key(head, rel));
    }
  }
  for (int head = 0; head < n_ent; ++head) {
    for (int rel = 0; rel < n_rel; ++rel) {
      const double u = rng.uniform();
      if (used.count(slot_key(head, rel)) || u >= config.fact_density) continue;
      int tail = static_cast<int>(rng.uniform_int(n_ent - 1));
      if (tail >= head) ++tail;
      facts.push_back({head, rel, tail});
      used.insert(slot_key(head, rel));
    }
  }

  // Distractors never share a (head, relation) slot with a fact, so they add
  // noise without contradicting the graph.
  const Vocab vocab(n_rel, n_ent);
  std::vector<Document> distractors;
  std::set<std::tuple<int, int, int>> seen;
  const long max_attempts = 100L * (config.num_distractors + 1);
  for (long attempt = 0;
       static_cast<int>(distractors.size()) < config.num_distractors; ++attempt) {
    if (attempt >= max_attempts) {
      throw Infeasible("gen_world: cannot draw " + std::to_string(config.num_distractors) +
                       " distinct distractors");
    }
    const int head = static_cast<int>(rng.uniform_int(n_ent));
    const int rel = static_cast<int>(rng.uniform_int(n_rel));
    int tail = static_cast<int>(rng.uniform_int(n_ent - 1));
    if (tail >= head) ++tail;
    if (used.count(slot_key(head, rel)) || !seen.emplace(head, rel, tail).second) continue;
    distractors.push_back(Document{
        {vocab.entity_token(head), vocab.relation_token(rel), vocab.entity_token(tail)},
        std::nullopt});
  }
  return World(config, seed, std::move(facts), std::move(distractors));
}

QueryInstance gen_query(const World& world, int hops, Rng& rng, int id) {
  if (hops < 1 || hops > world.max_hops()) {
    throw InvalidArgument("gen_query: hops=" + std::to_string(hops) + " outside [1, " +
                          std::to_string(world.max_hops()) + "]");
  }
  const int n_ent = world.num_entities();
  constexpr int kWalkAttempts = 256;
  std::vector<char> visited(n_ent, 0);
  for (int attempt = 0; attempt < kWalkAttempts; ++attempt) {
    std::fill(visited.begin(), visited.end(), 0);
    int entity = static_cast<int>(rng.uniform_int(n_ent));
    visited[entity] = 1;
    std::vector<int> chain;
    while (static_cast<int>(chain.size()) < hops) {
      std::vector<int> options;
      for (int fid : world.outgoing(entity)) {
        if (!visited[world.facts()[fid].tail]) options.push_back(fid);
      }
      if (options.empty()) break;
      const int fid = options[rng.uniform_int(options.size())];
      chain.push_back(fid);
      entity = world.facts()[fid].tail;
      visited[entity] = 1;
    }
    if (static_cast<int>(chain.size()) == hops) return make_query(world, chain, id);
  }
  std::vector<std::vector<int>> paths;
  for (int start = 0; start < n_ent; ++start) {
    std::fill(visited.begin(), visited.end(), 0);
    visited[start] = 1;
    std::vector<int> path;
    enumerate_paths(world, hops, path, visited, start, paths);
  }
  if (paths.empty()) {
    throw Infeasible("gen_query: world has no " + std::to_string(hops) + "-hop chain");
  }
  return make_query(world, paths[rng.uniform_int(paths.size())], id);
}

std::vector<Document> retrieve(const World& world, const SubqueryKey& subquery, int k) {
  if (k < 1) throw InvalidArgument("retrieve: k must be >= 1");
  const Vocab& v = world.vocab();
  const auto& docs = world.documents();
  const auto& noise = world.distractors();
  const int n_facts = static_cast<int>(docs.size());
  const int pool = static_cast<int>(world.pool_size());
  const auto exact = world.find_fact(subquery.entity, subquery.relation);

  std::vector<std::pair<int, int>> ranked;  // (-score, pool index)
  ranked.reserve(pool);
  for (int i = 0; i < pool; ++i) {
    const auto& doc = i < n_facts ? docs[i] : noise[i - n_facts];
    const int score = (exact && *exact == i) ? kExactMatchScore
                                             : overlap_score(v, doc.tokens, subquery);
    ranked.emplace_back(-score, i);
  }
  const int take = std::min(k, pool);
  std::partial_sort(ranked.begin(), ranked.begin() + take, ranked.end());
  std::vector<Document> out;
  out.reserve(take);
  for (int j = 0; j < take; ++j) {
    const int i = ranked[j].second;
    out.push_back(i < n_facts ? docs[i] : noise[i - n_facts]);
  }
  return out;
}

double token_f1(const std::vector<Token>& pred, const std::vector<Token>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::vector<Token> a = pred;
  std::vector<Token> b = gold;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<Token> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double precision = static_cast<double>(common.size()) / pred.size();
  const double recall = static_cast<double>(common.size()) / gold.size();
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::vector<Token>> document_tokens(const std::vector<Document>& docs) {
  std::vector<std::vector<Token>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.tokens);
  return out;
}

Trajectory oracle_trajectory(const World& world, const QueryInstance& query, int k_docs) {
  const Vocab& v = world.vocab();
  State state(query.id, query.query_tokens);
  auto emit = [&state](std::initializer_list<Token> tokens) {
    for (Token t : tokens) state.push(t);
  };
  for (int h = 0; h < query.hop_count; ++h) {
    const Fact& f = world.facts()[query.gold_chain[h]];
    const Token rel = v.relation_token(f.relation);
    emit({token(Control::kStepOpen), rel, token(Control::kStepClose)});
    emit({token(Control::kSubqueryOpen), rel, v.entity_token(f.head),
          token(Control::kSubqueryClose)});
    state.append_retrieval(document_tokens(retrieve(world, {f.relation, f.head}, k_docs)));
    emit({token(Control::kSubanswerOpen), v.entity_token(f.tail),
          token(Control::kSubanswerClose)});
  }
  state.push(token(Control::kAnswerOpen));
  for (Token t : query.gold_answer) state.push(t);
  state.push(token(Control::kAnswerClose));
  return state.to_trajectory();
}

int Judge::grade(const State& context, const Step& step) const {
  const Vocab& v = world_->vocab();
  if (!is_step_valid(step, v) || !step.is_policy()) return 0;
  const StateSummary sum = summarize(context, v);
  const int hops = query_->hop_count;
  const int h = sum.subanswers;
  if (step.kind != expected_kind(context, h, hops)) return 1;

  // Entities are graded against the context's own chain: on the gold chain
  // this is the gold continuation, and after a deviation it is the logically
  // consistent next step.
  const int bridge = h > 0 ? sum.last_subanswer : sum.query_head;
  const auto body = step.interior();
  switch (step.kind) {
    case StepKind::kPlan:
      return h < hops && v.relation_of(body[0]) == query_->gold_subqueries[h].relation ? 2 : 1;
    case StepKind::kSubquery: {
      if (h >= hops) return 1;
      const SubqueryKey key = parse_subquery(step, v);
      for (const auto& [rel, ent] : sum.subqueries) {
        if (rel == key.relation && ent == key.entity) return 1;
      }
      return key.relation == query_->gold_subqueries[h].relation && key.entity == bridge ? 2 : 1;
    }
    case StepKind::kSubanswer: {
      if (h >= hops || sum.subqueries.empty()) return 1;
      const auto [rel, ent] = sum.subqueries.back();
      const auto fact = world_->find_fact(ent, rel);
      return fact && v.entity_of(body[0]) == world_->facts()[*fact].tail ? 2 : 1;
    }
    case StepKind::kAnswer:
      return h == hops && body.size() == 1 && v.entity_of(body[0]) == bridge ? 2 : 1;
    default:
      return 1;
  }
}

Verdict Judge::compare(const State& context, const Step& a, const Step& b) const {
  if (a == b) return Verdict::kTie;
  const int ga = grade(context, a);
  const int gb = grade(context, b);
  if (ga > gb) return Verdict::kFirst;
  if (gb > ga) return Verdict::kSecond;
  return Verdict::kTie;
}

void write_world(std::ostream& out, const World& world) {
  const Vocab& v = world.vocab();
  out << json{{"kind", "world"},
              {"format", kWorldFormat},
              {"seed", world.seed()},
              {"config", world_config_json(world.config())}}
             .dump()
      << '\n';
  for (std::size_t i = 0; i < world.facts().size(); ++i) {
    const Fact& f = world.facts()[i];
    out << json{{"kind", "fact"},
                {"id", i},
                {"head", v.name(v.entity_token(f.head))},
                {"relation", v.name(v.relation_token(f.relation))},
                {"tail", v.name(v.entity_token(f.tail))},
                {"doc", token_names(v, world.documents()[i].tokens)}}
               .dump()
        << '\n';
  }
  for (std::size_t i = 0; i < world.distractors().size(); ++i) {
    out << json{{"kind", "distractor"},
                {"id", i},
                {"doc", token_names(v, world.distractors()[i].tokens)}}
               .dump()
        << '\n';
  }
}

World read_world(std::istream& in) {
  std::string line;
  std::optional<WorldConfig> config;
  std::uint64_t seed = 0;
  std::vector<Fact> facts;
  std::vector<Document> distractors;
  Vocab vocab;
  int lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json rec = json::parse(line);
      const std::string kind = rec.at("kind");
      if (kind == "world") {
        if (rec.at("format").get<int>() != kWorldFormat) {
          throw FormatError("world file: unsupported format version");
        }
        const json& c = rec.at("config");
        WorldConfig wc;
        wc.num_entities = c.at("num_entities");
        wc.num_relations = c.at("num_relations");
        wc.num_distractors = c.at("num_distractors");
        wc.max_hops = c.at("max_hops");
        wc.planted_chains = c.at("planted_chains");
        wc.fact_density = c.at("fact_density");
        config = wc;
        seed = rec.at("seed").get<std::uint64_t>();
        vocab = Vocab(wc.num_relations, wc.num_entities);
      } else if (!config) {
        throw FormatError("world file: header line missing");
      } else if (kind == "fact") {
        Fact f;
        f.head = vocab.entity_of(vocab.parse(rec.at("head").get<std::string>()));
        f.relation = vocab.relation_of(vocab.parse(rec.at("relation").get<std::string>()));
        f.tail = vocab.entity_of(vocab.parse(rec.at("tail").get<std::string>()));
        if (rec.at("id").get<std::size_t>() != facts.size()) {
          throw FormatError("world file: fact ids out of order");
        }
        facts.push_back(f);
      } else if (kind == "distractor") {
        distractors.push_back(
            Document{vocab.parse_all(rec.at("doc").get<std::vector<std::string>>()),
                     std::nullopt});
      } else {
        throw FormatError("world file: unknown record kind '" + kind + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("world file line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!config) throw FormatError("world file: empty");
  return World(*config, seed, std::move(facts), std::move(distractors));
}

void save_world(const std::string& path, const World& world) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_world(out, world);
  if (!out) throw IoError("write failed: " + path);
}

World load_world(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_world(in);
}

void write_queries(std::ostream& out, const World& world,
                   const std::vector<QueryInstance>& queries) {
  const Vocab& v = world.vocab();
  for (const auto& q : queries) {
    json subqueries = json::array();
    for (const auto& sq : q.gold_subqueries) {
      subqueries.push_back({v.name(v.relation_token(sq.relation)),
                            v.name(v.entity_token(sq.entity))});
    }
    out << json{{"kind", "query"},
                {"id", q.id},
                {"query", token_names(v, q.query_tokens)},
                {"hops", q.hop_count},
                {"gold_chain", q.gold_chain},
                {"gold_subqueries", subqueries},
                {"gold_answer", token_names(v, q.gold_answer)}}
               .dump()
        << '\n';
  }
}

std::vector<QueryInstance> read_queries(std::istream& in, const World& world) {
  const Vocab& v = world.vocab();
  std::vector<QueryInstance> out;
  std::string line;
  int lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json rec = json::parse(line);
      if (rec.at("kind") != "query") throw FormatError("query file: unexpected record");
      QueryInstance q;
      q.id = rec.at("id");
      q.query_tokens = v.parse_all(rec.at("query").get<std::vector<std::string>>());
      q.hop_count = rec.at("hops");
      q.gold_chain = rec.at("gold_chain").get<std::vector<int>>();
      for (const auto& sq : rec.at("gold_subqueries")) {
        q.gold_subqueries.push_back({v.relation_of(v.parse(sq.at(0).get<std::string>())),
                                     v.entity_of(v.parse(sq.at(1).get<std::string>()))});
      }
      q.gold_answer = v.parse_all(rec.at("gold_answer").get<std::vector<std::string>>());
      for (int fid : q.gold_chain) {
        if (fid < 0 || fid >= static_cast<int>(world.facts().size())) {
          throw FormatError("query file: fact id out of range");
        }
      }
      out.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw FormatError("query file line " + std::to_string(lineno) + ": " + e.what());
  }
  return out;
}

void save_queries(const std::string& path, const World& world,
                  const std::vector<QueryInstance>& queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_queries(out, world, queries);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<QueryInstance> load_queries(const std::string& path, const World& world) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_queries(in, world);
}

}  // namespace hoplab::env
