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

#include "hoplab/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hoplab/records.hpp"

namespace hoplab::mcts {

void MctsConfig::validate() const {
  if (!(c_puct > 0.0)) throw InvalidArgument("mcts: c_puct must be > 0");
  if (expansion_width < 2) throw InvalidArgument("mcts: expansion width K must be >= 2");
  if (max_depth < 1) throw InvalidArgument("mcts: max_depth must be >= 1");
  if (n_simulations < 0) throw InvalidArgument("mcts: n_simulations must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("mcts: gamma must be in (0, 1]");
  if (!(expansion_temperature > 0.0)) {
    throw InvalidArgument("mcts: expansion temperature must be > 0");
  }
  if (k_docs < 1) throw InvalidArgument("mcts: k_docs must be >= 1");
}

double puct_score(const EdgeStats& edge, int sibling_visits, double c_puct) {
  return edge.value +
         c_puct * edge.prior * std::sqrt(static_cast<double>(sibling_visits)) / (1.0 + edge.visits);
}

std::size_t puct_select(std::span<const EdgeStats> children, double c_puct) {
  if (children.empty()) throw InvalidArgument("puct_select: node has no expanded children");
  int total = 0;
  for (const auto& c : children) total += c.visits;
  std::size_t best = 0;
  double best_score = puct_score(children[0], total, c_puct);
  for (std::size_t i = 1; i < children.size(); ++i) {
    const double s = puct_score(children[i], total, c_puct);
    if (s > best_score || (s == best_score && children[i].prior > children[best].prior)) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

void backup_edge(EdgeStats& edge, int value, int steps_to_terminal, double gamma) {
  if (steps_to_terminal < 0) throw InvalidArgument("backup: terminal step precedes the edge");
  const double ret = std::pow(gamma, steps_to_terminal) * value;
  edge.value = (edge.value * edge.visits + ret) / (edge.visits + 1);
  ++edge.visits;
}

std::vector<Expansion<State, Step>> RagDomain::expand(const State& s, Rng& rng) const {
  if (s.terminal()) throw InvalidArgument("expand: node is terminal");
  std::vector<Expansion<State, Step>> out;
  std::vector<double> logp;
  for (int k = 0; k < config_.expansion_width; ++k) {
    State child = s;
    policy::generate_step(*policy_, *world_, child, config_.expansion_temperature,
                          config_.k_docs, rng);
    const auto& steps = child.steps();
    const Step& step = steps.back().is_policy() ? steps.back() : steps[steps.size() - 2];
    const bool dup = std::any_of(out.begin(), out.end(),
                                 [&](const auto& e) { return e.action == step; });
    if (dup) continue;
    double lp = 0.0;
    for (double x : step.behavior_logprob) lp += x;
    logp.push_back(lp);
    out.push_back({std::move(child), step, 0.0});
  }
  const double hi = *std::max_element(logp.begin(), logp.end());
  double z = 0.0;
  for (double lp : logp) z += std::exp(lp - hi);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].prior = std::exp(logp[i] - hi) / z;
  return out;
}

SimulationResult RagDomain::simulate(const State& s, int depth, Rng& rng) const {
  State state = s;
  policy::RolloutOptions opt;
  opt.max_steps = root_steps_ + config_.max_depth;
  opt.k_docs = config_.k_docs;
  opt.temperature = 1.0;
  if (!state.terminal() && state.policy_steps() < opt.max_steps) {
    policy::continue_rollout(*policy_, *world_, state, opt, rng);
  }
  auto traj = std::make_shared<Trajectory>(state.to_trajectory());
  SimulationResult r;
  const auto answer = traj->answer();
  r.value = (traj->terminal && answer && *answer == query_->gold_answer) ? 1 : 0;
  r.terminal_step = std::max(depth, state.policy_steps() - root_steps_);
  r.rollout = std::move(traj);
  return r;
}

SearchTree run_search(const env::QueryInstance& query, const policy::Policy& policy,
                      const env::World& world, const MctsConfig& config, Rng& rng,
                      const BackupObserver& observer) {
  RagDomain domain(policy, world, query, config);
  return search(domain, State(query.id, query.query_tokens), config, rng, observer);
}

std::vector<PreferencePair> extract_sibling_pairs(const SearchTree& tree, const env::Judge& judge,
                                                  int tree_id) {
  std::vector<PreferencePair> out;
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const auto& node = tree.nodes[id];
    const auto& kids = node.children;
    for (std::size_t i = 0; i < kids.size(); ++i) {
      for (std::size_t j = i + 1; j < kids.size(); ++j) {
        const Step& a = tree.nodes[kids[i]].action;
        const Step& b = tree.nodes[kids[j]].action;
        const env::Verdict v = judge.compare(node.state, a, b);
        if (v == env::Verdict::kTie) continue;
        PreferencePair p;
        p.context = node.state;
        p.chosen = v == env::Verdict::kFirst ? a : b;
        p.rejected = v == env::Verdict::kFirst ? b : a;
        p.tree_id = tree_id;
        p.node_id = static_cast<int>(id);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

nlohmann::json tree_to_json(const SearchTree& tree, const Vocab& vocab, int tree_id) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const auto& n = tree.nodes[id];
    nlohmann::json j{{"id", id},
                     {"parent", n.parent},
                     {"depth", n.depth},
                     {"N", n.edge.visits},
                     {"Q", records::format_double(n.edge.value)},
                     {"prior", records::format_double(n.edge.prior)},
                     {"terminal", n.terminal},
                     {"children", n.children}};
    if (n.parent >= 0) {
      j["kind"] = std::string(step_kind_name(n.action.kind));
      j["step"] = vocab.names(n.action.tokens);
    }
    nodes.push_back(std::move(j));
  }
  const State& root = tree.root().state;
  return nlohmann::json{{"tree_id", tree_id},
                        {"query_id", root.query_id()},
                        {"query", vocab.names(root.query_tokens())},
                        {"nodes", nodes}};
}

nlohmann::json pair_to_json(const PreferencePair& pair, const Vocab& vocab) {
  nlohmann::json j = records::state_to_json(pair.context, vocab);
  j["chosen"] = records::step_to_json(pair.chosen, vocab);
  j["rejected"] = records::step_to_json(pair.rejected, vocab);
  j["tree_id"] = pair.tree_id;
  j["node_id"] = pair.node_id;
  return j;
}

PreferencePair pair_from_json(const nlohmann::json& j, const Vocab& vocab) {
  PreferencePair p;
  p.context = records::state_from_json(j, vocab);
  p.chosen = records::step_from_json(j.at("chosen"), vocab);
  p.rejected = records::step_from_json(j.at("rejected"), vocab);
  p.tree_id = j.value("tree_id", -1);
  p.node_id = j.value("node_id", -1);
  if (p.chosen == p.rejected) throw FormatError("pair record: chosen equals rejected");
  return p;
}

}  // namespace hoplab::mcts
