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

#ifndef HOPLAB_MCTS_HPP_
#define HOPLAB_MCTS_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hoplab/error.hpp"
#include "hoplab/policy.hpp"
#include "hoplab/rng.hpp"
#include "hoplab/synth_env.hpp"
#include "json.hpp"

namespace hoplab::mcts {

struct MctsConfig {
  double c_puct = 2.5;
  int expansion_width = 5;  // K
  int max_depth = 10;
  int n_simulations = 200;
  double gamma = 0.99;
  double expansion_temperature = 1.5;
  int k_docs = 3;

  void validate() const;
};

struct SimulationResult {
  int value = 0;          // v in {0, 1}
  int terminal_step = 0;  // T, in tree-depth units from the root
  std::shared_ptr<const Trajectory> rollout;
};

// Statistics of one edge as seen by the selection rule.
struct EdgeStats {
  double prior = 0.0;
  int visits = 0;
  double value = 0.0;
};

double puct_score(const EdgeStats& edge, int sibling_visits, double c_puct);
// Highest score wins; ties go to the higher prior, then the lower index.
std::size_t puct_select(std::span<const EdgeStats> children, double c_puct);
// One discounted running-mean update of an edge.
void backup_edge(EdgeStats& edge, int value, int steps_to_terminal, double gamma);

template <typename StateT, typename ActionT>
struct Node {
  StateT state;
  ActionT action{};  // edge from the parent; unused at the root
  int parent = -1;
  int depth = 0;
  EdgeStats edge;  // prior, N and Q of the edge parent -> this node
  bool expanded = false;
  bool terminal = false;
  std::vector<int> children;
};

template <typename StateT, typename ActionT>
struct Tree {
  std::vector<Node<StateT, ActionT>> nodes;  // nodes[0] is the root

  const Node<StateT, ActionT>& root() const { return nodes.front(); }
  std::vector<EdgeStats> child_stats(int id) const {
    std::vector<EdgeStats> out;
    for (int c : nodes[id].children) out.push_back(nodes[c].edge);
    return out;
  }
};

template <typename StateT, typename ActionT>
struct Expansion {
  StateT state;
  ActionT action;
  double prior = 0.0;
};

// Called after every backpropagation with the root-to-leaf node path.
using BackupObserver = std::function<void(const std::vector<int>& path, const SimulationResult&)>;

// Generic PUCT search. The domain provides
//   bool is_terminal(const State&) const
//   std::vector<Expansion<State, Action>> expand(const State&, Rng&) const
//   SimulationResult simulate(const State&, int depth, Rng&) const
// Simulations are sequential: selection descends through expanded nodes, a
// leaf that was visited before is expanded and one of its new children
// selected, the leaf is simulated, and every edge on the path is updated.
template <typename Domain, typename StateT = typename Domain::State,
          typename ActionT = typename Domain::Action>
Tree<StateT, ActionT> search(const Domain& domain, StateT root_state, const MctsConfig& config,
                             Rng& rng, const BackupObserver& observer = {}) {
  config.validate();
  using NodeT = Node<StateT, ActionT>;
  Tree<StateT, ActionT> tree;
  NodeT root;
  root.state = std::move(root_state);
  root.terminal = domain.is_terminal(root.state);
  tree.nodes.push_back(std::move(root));

  auto expand = [&](int id) {
    tree.nodes[id].expanded = true;
    auto kids = domain.expand(tree.nodes[id].state, rng);
    for (auto& k : kids) {
      NodeT child;
      child.state = std::move(k.state);
      child.action = std::move(k.action);
      child.parent = id;
      child.depth = tree.nodes[id].depth + 1;
      child.edge.prior = k.prior;
      child.terminal = domain.is_terminal(child.state);
      tree.nodes.push_back(std::move(child));
      tree.nodes[id].children.push_back(static_cast<int>(tree.nodes.size()) - 1);
    }
  };
  auto select = [&](int id) {
    const auto stats = tree.child_stats(id);
    return tree.nodes[id].children[puct_select(stats, config.c_puct)];
  };
  auto expandable = [&](int id) {
    const NodeT& n = tree.nodes[id];
    return !n.expanded && !n.terminal && n.depth < config.max_depth;
  };

  if (expandable(0)) expand(0);

  std::vector<int> path;
  for (int sim = 0; sim < config.n_simulations; ++sim) {
    path.assign(1, 0);
    int id = 0;
    while (tree.nodes[id].expanded && !tree.nodes[id].children.empty()) {
      id = select(id);
      path.push_back(id);
    }
    if (expandable(id) && tree.nodes[id].edge.visits > 0) {
      expand(id);
      if (!tree.nodes[id].children.empty()) {
        id = select(id);
        path.push_back(id);
      }
    }
    const SimulationResult result = domain.simulate(tree.nodes[id].state, tree.nodes[id].depth, rng);
    if (result.value != 0 && result.value != 1) {
      throw Error(ErrorKind::kInternal, "mcts: simulation value must be 0 or 1");
    }
    for (std::size_t i = 1; i < path.size(); ++i) {
      NodeT& n = tree.nodes[path[i]];
      backup_edge(n.edge, result.value, result.terminal_step - n.depth, config.gamma);
    }
    if (observer) observer(path, result);
  }
  return tree;
}

// Retrieval-augmented reasoning as a search domain: one node per policy step,
// with the retrieval block of a subquery frozen into the child state.
class RagDomain {
 public:
  using State = hoplab::State;
  using Action = Step;

  RagDomain(const policy::Policy& policy, const env::World& world,
            const env::QueryInstance& query, const MctsConfig& config, int root_policy_steps = 0)
      : policy_(&policy), world_(&world), query_(&query), config_(config),
        root_steps_(root_policy_steps) {}

  bool is_terminal(const State& s) const { return s.terminal(); }
  // Samples K candidate steps at the expansion temperature, removes
  // duplicates and renormalizes their temperature-1 step probabilities.
  std::vector<Expansion<State, Action>> expand(const State& s, Rng& rng) const;
  // Rolls out at temperature 1 until an answer, EOS or the depth budget;
  // v = 1 iff the extracted answer equals the gold answer exactly.
  SimulationResult simulate(const State& s, int depth, Rng& rng) const;

 private:
  const policy::Policy* policy_;
  const env::World* world_;
  const env::QueryInstance* query_;
  MctsConfig config_;
  int root_steps_;
};

using SearchTree = Tree<State, Step>;

SearchTree run_search(const env::QueryInstance& query, const policy::Policy& policy,
                      const env::World& world, const MctsConfig& config, Rng& rng,
                      const BackupObserver& observer = {});

// Shared parent context plus a judged sibling pair.
struct PreferencePair {
  State context;
  Step chosen;
  Step rejected;
  int tree_id = -1;
  int node_id = -1;
};

std::vector<PreferencePair> extract_sibling_pairs(const SearchTree& tree, const env::Judge& judge,
                                                  int tree_id = -1);

nlohmann::json tree_to_json(const SearchTree& tree, const Vocab& vocab, int tree_id);
nlohmann::json pair_to_json(const PreferencePair& pair, const Vocab& vocab);
PreferencePair pair_from_json(const nlohmann::json& j, const Vocab& vocab);

}  // namespace hoplab::mcts

#endif  // HOPLAB_MCTS_HPP_
