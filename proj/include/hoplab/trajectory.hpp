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

#ifndef HOPLAB_TRAJECTORY_HPP_
#define HOPLAB_TRAJECTORY_HPP_

#include <optional>
#include <string_view>
#include <vector>

#include "hoplab/vocab.hpp"

namespace hoplab {

// kMalformed holds policy output that does not start with an opening marker
// (only reachable with structural masking disabled), including a bare EOS.
enum class StepKind { kPlan, kSubquery, kRetrieval, kSubanswer, kAnswer, kMalformed };
inline constexpr int kNumStepKinds = 6;

enum class Provenance { kPolicy, kEnvironment };

std::string_view step_kind_name(StepKind kind);
StepKind parse_step_kind(std::string_view name);

// Every document verbalizes one triple: (head entity, relation, tail entity).
inline constexpr int kDocTokens = 3;
// A policy step is force-closed once it reaches this many tokens.
inline constexpr int kMaxStepTokens = 6;
inline constexpr int kMaxAnswerEntities = 3;

struct Step {
  StepKind kind = StepKind::kMalformed;
  std::vector<Token> tokens;
  std::vector<Provenance> provenance;
  // log pi_old(token | history) recorded at sampling time, temperature 1.
  // Empty for steps that were not sampled (oracle, replayed data).
  std::vector<double> behavior_logprob;

  bool is_policy() const { return kind != StepKind::kRetrieval; }
  // Tokens strictly between the opening marker and a trailing close marker.
  std::vector<Token> interior() const;

  // Identity is (kind, tokens); bookkeeping fields do not participate.
  friend bool operator==(const Step& a, const Step& b) {
    return a.kind == b.kind && a.tokens == b.tokens;
  }
};

struct Trajectory {
  int query_id = -1;
  std::vector<Token> query_tokens;
  std::vector<Step> steps;
  // True when generation stopped on an answer step or EOS, false when the
  // step budget ran out.
  bool terminal = false;

  // Non-control tokens of the final answer step, if the trajectory has one.
  std::optional<std::vector<Token>> answer() const;
  // T_i: number of policy-generated steps.
  int policy_step_count() const;
  int retrieval_count() const;
};

// Token-driven reasoning state. Policy tokens are pushed one at a time and
// close steps according to the block grammar; retrieval blocks are appended
// whole by the environment.
class State {
 public:
  State() = default;
  State(int query_id, std::vector<Token> query_tokens);
  // Replays the completed steps of a trajectory prefix.
  static State from_steps(int query_id, std::vector<Token> query_tokens,
                          const std::vector<Step>& steps);

  // Appends a policy token. Returns true when the token closed a step.
  bool push(Token t, double behavior_logprob);
  bool push(Token t);
  void append_retrieval(const std::vector<std::vector<Token>>& documents);
  // Replays one token of a retrieval block; the block closes on its closing
  // marker. Used to score environment tokens under the policy.
  void push_environment(Token t);
  // Appends an already-complete step (policy or retrieval) without replaying
  // its tokens through the grammar.
  void append_step(const Step& step);

  int query_id() const { return query_id_; }
  const std::vector<Token>& query_tokens() const { return query_tokens_; }
  // Hop count of the query: the relations that follow the head entity.
  int hops() const { return static_cast<int>(query_tokens_.size()) - 1; }

  const std::vector<Step>& steps() const { return steps_; }
  bool in_step() const { return in_step_; }
  const Step& partial() const { return partial_; }
  // Count of closed steps, retrieval blocks included.
  int step_index() const { return static_cast<int>(steps_.size()); }
  int policy_steps() const { return policy_steps_; }
  bool terminal() const { return terminal_; }
  // True right after a subquery step closed and before its retrieval block.
  bool awaiting_retrieval() const;

  Trajectory to_trajectory() const;

  friend bool operator==(const State& a, const State& b) {
    return a.query_id_ == b.query_id_ && a.query_tokens_ == b.query_tokens_ &&
           a.steps_ == b.steps_ && a.in_step_ == b.in_step_ &&
           a.partial_ == b.partial_ && a.terminal_ == b.terminal_;
  }

 private:
  void close_partial();

  int query_id_ = -1;
  std::vector<Token> query_tokens_;
  std::vector<Step> steps_;
  Step partial_;
  bool in_step_ = false;
  bool terminal_ = false;
  int policy_steps_ = 0;
};

// Derived view of a state used by featurizers, the judge and the reward
// model. Entities and relations are dense indices; -1 means absent.
struct StateSummary {
  StepKind last_kind{};
  bool has_last = false;
  int subanswers = 0;
  int pointer_relation = -1;  // query relation of the current hop
  int query_head = -1;
  int last_subanswer = -1;
  int last_plan_relation = -1;
  int top_doc_tail = -1;               // tail of the rank-0 document
  std::vector<int> retrieved_tails;    // tails of the last retrieval block
  std::vector<std::pair<int, int>> subqueries;  // (relation, entity) issued
  bool retrieved_since_subanswer = false;
};

StateSummary summarize(const State& state, const Vocab& vocab);

// (relation, entity) read from a subquery step, best effort: the first
// relation and the first entity token of its interior.
struct SubqueryKey {
  int relation = -1;
  int entity = -1;
  friend bool operator==(const SubqueryKey&, const SubqueryKey&) = default;
};
SubqueryKey parse_subquery(const Step& step, const Vocab& vocab);

// Format indicators: tag schema of one step, and the complete workflow
// (>= 1 subquery, >= 1 retrieval, exactly one answer, last, all steps valid).
bool is_step_valid(const Step& step, const Vocab& vocab);
bool is_traj_valid(const Trajectory& traj, const Vocab& vocab);

StepKind kind_for_opener(Token opener);

}  // namespace hoplab

#endif  // HOPLAB_TRAJECTORY_HPP_
