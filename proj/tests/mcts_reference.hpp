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

#ifndef HOPLAB_TESTS_MCTS_REFERENCE_HPP_
#define HOPLAB_TESTS_MCTS_REFERENCE_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hoplab/mcts.hpp"
#include "hoplab/rng.hpp"

namespace hoplab::testing {

// A synthetic search domain: states are action paths, leaves sit at a fixed
// depth, branching and priors are pseudo-random functions of the path. The
// value of a simulation is either a deterministic function of the path or a
// Bernoulli draw with a path-dependent rate.
struct ToyDomain {
  using State = std::vector<int>;
  using Action = int;

  int depth = 3;
  int max_branch = 3;
  std::uint64_t seed = 0;
  bool stochastic = false;
  // Overrides the value of a simulation when set.
  std::function<int(const State&)> value_fn;

  std::uint64_t hash(const State& s, std::string_view tag) const {
    std::uint64_t h = derive_seed(seed, tag);
    for (int a : s) h = derive_seed(h, tag, static_cast<std::uint64_t>(a) + 1);
    return h;
  }
  int branching(const State& s) const {
    return 1 + static_cast<int>(hash(s, "branch") % static_cast<std::uint64_t>(max_branch));
  }
  std::vector<double> priors(const State& s) const {
    std::vector<double> w;
    double z = 0.0;
    for (int a = 0; a < branching(s); ++a) {
      State c = s;
      c.push_back(a);
      w.push_back(1.0 + static_cast<double>(hash(c, "prior") % 100));
      z += w.back();
    }
    for (double& x : w) x /= z;
    return w;
  }

  bool is_terminal(const State& s) const { return static_cast<int>(s.size()) >= depth; }

  std::vector<mcts::Expansion<State, Action>> expand(const State& s, Rng&) const {
    std::vector<mcts::Expansion<State, Action>> out;
    const auto p = priors(s);
    for (int a = 0; a < static_cast<int>(p.size()); ++a) {
      State c = s;
      c.push_back(a);
      out.push_back({c, a, p[a]});
    }
    return out;
  }

  mcts::SimulationResult simulate(const State& s, int node_depth, Rng& rng) const {
    mcts::SimulationResult r;
    if (value_fn) {
      r.value = value_fn(s);
    } else if (stochastic) {
      const double rate = static_cast<double>(hash(s, "rate") % 1000) / 1000.0;
      r.value = rng.uniform() < rate ? 1 : 0;
    } else {
      r.value = static_cast<int>(hash(s, "value") % 2);
    }
    r.terminal_step = std::max(node_depth, depth);
    return r;
  }
};

// Exhaustive replay of the PUCT recursion with its own bookkeeping, keyed by
// path. Deterministic domains only.
struct ReferenceStats {
  int visits = 0;
  double q = 0.0;
};

inline std::map<std::vector<int>, ReferenceStats> reference_search(const ToyDomain& d,
                                                                   const mcts::MctsConfig& c) {
  struct RefNode {
    std::vector<int> path;
    double prior = 0.0;
    int n = 0;
    double q = 0.0;
    bool expanded = false;
    std::vector<int> kids;
  };
  std::vector<RefNode> nodes{RefNode{}};
  auto can_expand = [&](int id) {
    const RefNode& x = nodes[id];
    return !x.expanded && !d.is_terminal(x.path) && static_cast<int>(x.path.size()) < c.max_depth;
  };
  auto expand = [&](int id) {
    nodes[id].expanded = true;
    const auto p = d.priors(nodes[id].path);
    if (d.is_terminal(nodes[id].path)) return;
    for (int a = 0; a < static_cast<int>(p.size()); ++a) {
      RefNode k;
      k.path = nodes[id].path;
      k.path.push_back(a);
      k.prior = p[a];
      nodes.push_back(k);
      nodes[id].kids.push_back(static_cast<int>(nodes.size()) - 1);
    }
  };
  // argmax of Q + c p sqrt(sum N) / (1 + N); ties: higher prior, then first.
  auto pick = [&](int id) {
    int sum = 0;
    for (int k : nodes[id].kids) sum += nodes[k].n;
    int best = -1;
    double best_score = 0.0;
    for (int k : nodes[id].kids) {
      const RefNode& x = nodes[k];
      const double score = x.q + c.c_puct * x.prior * std::sqrt(static_cast<double>(sum)) / (1.0 + x.n);
      if (best < 0 || score > best_score ||
          (score == best_score && x.prior > nodes[best].prior)) {
        best = k;
        best_score = score;
      }
    }
    return best;
  };
  std::function<void(int, std::vector<int>&)> descend = [&](int id, std::vector<int>& path) {
    path.push_back(id);
    if (nodes[id].expanded && !nodes[id].kids.empty()) return descend(pick(id), path);
    if (can_expand(id) && nodes[id].n > 0) {
      expand(id);
      if (!nodes[id].kids.empty()) path.push_back(pick(id));
    }
  };

  if (can_expand(0)) expand(0);
  Rng unused(0);
  for (int sim = 0; sim < c.n_simulations; ++sim) {
    std::vector<int> path;
    descend(0, path);
    const RefNode& leaf = nodes[path.back()];
    const auto r = d.simulate(leaf.path, static_cast<int>(leaf.path.size()), unused);
    for (std::size_t i = 1; i < path.size(); ++i) {
      RefNode& x = nodes[path[i]];
      const int t = static_cast<int>(x.path.size());
      x.q = (x.q * x.n + std::pow(c.gamma, r.terminal_step - t) * r.value) / (x.n + 1);
      x.n += 1;
    }
  }
  std::map<std::vector<int>, ReferenceStats> out;
  for (const auto& x : nodes) {
    if (!x.path.empty()) out[x.path] = {x.n, x.q};
  }
  return out;
}

// True when the library tree holds exactly the reference nodes with
// bit-identical statistics.
inline bool matches_reference(const mcts::Tree<std::vector<int>, int>& tree,
                              const std::map<std::vector<int>, ReferenceStats>& ref) {
  if (tree.nodes.size() != ref.size() + 1) return false;
  for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    const auto it = ref.find(n.state);
    if (it == ref.end()) return false;
    if (it->second.visits != n.edge.visits || it->second.q != n.edge.value) return false;
  }
  return true;
}

}  // namespace hoplab::testing

#endif  // HOPLAB_TESTS_MCTS_REFERENCE_HPP_
