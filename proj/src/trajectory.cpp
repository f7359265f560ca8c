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

#include "hoplab/trajectory.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "hoplab/error.hpp"

namespace hoplab {
namespace {

constexpr std::array<std::string_view, kNumStepKinds> kKindNames = {
    "plan", "subquery", "retrieval", "subanswer", "answer", "malformed"};

Token opener_for(StepKind kind) {
  switch (kind) {
    case StepKind::kPlan: return token(Control::kStepOpen);
    case StepKind::kSubquery: return token(Control::kSubqueryOpen);
    case StepKind::kRetrieval: return token(Control::kRetrievalOpen);
    case StepKind::kSubanswer: return token(Control::kSubanswerOpen);
    case StepKind::kAnswer: return token(Control::kAnswerOpen);
    case StepKind::kMalformed: break;
  }
  return -1;
}

}  // namespace

std::string_view step_kind_name(StepKind kind) {
  return kKindNames[static_cast<int>(kind)];
}

StepKind parse_step_kind(std::string_view name) {
  for (int i = 0; i < kNumStepKinds; ++i) {
    if (kKindNames[i] == name) return static_cast<StepKind>(i);
  }
  throw FormatError("unknown step kind '" + std::string(name) + "'");
}

StepKind kind_for_opener(Token opener) {
  switch (opener) {
    case token(Control::kStepOpen): return StepKind::kPlan;
    case token(Control::kSubqueryOpen): return StepKind::kSubquery;
    case token(Control::kRetrievalOpen): return StepKind::kRetrieval;
    case token(Control::kSubanswerOpen): return StepKind::kSubanswer;
    case token(Control::kAnswerOpen): return StepKind::kAnswer;
    default: return StepKind::kMalformed;
  }
}

std::vector<Token> Step::interior() const {
  if (tokens.empty()) return {};
  auto first = tokens.begin();
  auto last = tokens.end();
  if (Vocab::is_open(*first)) ++first;
  if (last - first > 0 && Vocab::is_close(*(last - 1))) --last;
  return {first, last};
}

std::optional<std::vector<Token>> Trajectory::answer() const {
  if (steps.empty() || steps.back().kind != StepKind::kAnswer) return std::nullopt;
  std::vector<Token> out;
  for (Token t : steps.back().tokens) {
    if (!Vocab::is_control(t) && t != kEos) out.push_back(t);
  }
  return out;
}

int Trajectory::policy_step_count() const {
  int n = 0;
  for (const auto& s : steps) n += s.is_policy() ? 1 : 0;
  return n;
}

int Trajectory::retrieval_count() const {
  int n = 0;
  for (const auto& s : steps) n += s.kind == StepKind::kRetrieval ? 1 : 0;
  return n;
}

State::State(int query_id, std::vector<Token> query_tokens)
    : query_id_(query_id), query_tokens_(std::move(query_tokens)) {
  if (query_tokens_.empty()) throw InvalidArgument("state: empty query");
}

State State::from_steps(int query_id, std::vector<Token> query_tokens,
                        const std::vector<Step>& steps) {
  State s(query_id, std::move(query_tokens));
  for (const auto& step : steps) s.append_step(step);
  return s;
}

bool State::push(Token t) {
  return push(t, std::numeric_limits<double>::quiet_NaN());
}

bool State::push(Token t, double behavior_logprob) {
  if (terminal_) throw InvalidArgument("state: push after terminal step");
  if (!in_step_) {
    partial_ = Step{};
    in_step_ = true;
    const StepKind kind = Vocab::is_open(t) ? kind_for_opener(t) : StepKind::kMalformed;
    // Retrieval blocks belong to the environment; a policy-emitted
    // <retrieval> marker starts a malformed step.
    partial_.kind = kind == StepKind::kRetrieval ? StepKind::kMalformed : kind;
  }
  partial_.tokens.push_back(t);
  partial_.provenance.push_back(Provenance::kPolicy);
  partial_.behavior_logprob.push_back(behavior_logprob);

  const bool opener_only = partial_.tokens.size() == 1 && Vocab::is_open(t);
  if (t == kEos) {
    close_partial();
    terminal_ = true;
    return true;
  }
  if ((Vocab::is_close(t) && !opener_only) ||
      static_cast<int>(partial_.tokens.size()) >= kMaxStepTokens) {
    close_partial();
    return true;
  }
  return false;
}

void State::close_partial() {
  steps_.push_back(std::move(partial_));
  partial_ = Step{};
  in_step_ = false;
  if (!steps_.back().is_policy()) return;
  ++policy_steps_;
  if (steps_.back().kind == StepKind::kAnswer) terminal_ = true;
}

void State::push_environment(Token t) {
  if (terminal_) throw InvalidArgument("state: push after terminal step");
  if (!in_step_) {
    if (t != token(Control::kRetrievalOpen)) {
      throw InvalidArgument("state: environment block must open with <retrieval>");
    }
    partial_ = Step{};
    partial_.kind = StepKind::kRetrieval;
    in_step_ = true;
  } else if (partial_.kind != StepKind::kRetrieval) {
    throw InvalidArgument("state: environment token inside a policy step");
  }
  partial_.tokens.push_back(t);
  partial_.provenance.push_back(Provenance::kEnvironment);
  if (t == token(Control::kRetrievalClose)) close_partial();
}

void State::append_retrieval(const std::vector<std::vector<Token>>& documents) {
  if (in_step_) throw InvalidArgument("state: retrieval inside an open step");
  Step step;
  step.kind = StepKind::kRetrieval;
  step.tokens.push_back(token(Control::kRetrievalOpen));
  for (const auto& doc : documents) {
    step.tokens.insert(step.tokens.end(), doc.begin(), doc.end());
  }
  step.tokens.push_back(token(Control::kRetrievalClose));
  step.provenance.assign(step.tokens.size(), Provenance::kEnvironment);
  steps_.push_back(std::move(step));
}

void State::append_step(const Step& step) {
  if (in_step_) throw InvalidArgument("state: append while a step is open");
  if (terminal_) throw InvalidArgument("state: append after terminal step");
  steps_.push_back(step);
  if (step.is_policy()) {
    ++policy_steps_;
    if (step.kind == StepKind::kAnswer ||
        (!step.tokens.empty() && step.tokens.back() == kEos)) {
      terminal_ = true;
    }
  }
}

bool State::awaiting_retrieval() const {
  return !in_step_ && !terminal_ && !steps_.empty() &&
         steps_.back().kind == StepKind::kSubquery;
}

Trajectory State::to_trajectory() const {
  Trajectory traj;
  traj.query_id = query_id_;
  traj.query_tokens = query_tokens_;
  traj.steps = steps_;
  if (in_step_) traj.steps.push_back(partial_);
  traj.terminal = terminal_;
  return traj;
}

StateSummary summarize(const State& state, const Vocab& vocab) {
  StateSummary out;
  const auto& query = state.query_tokens();
  if (vocab.is_entity(query[0])) out.query_head = vocab.entity_of(query[0]);
  for (const auto& step : state.steps()) {
    out.has_last = true;
    out.last_kind = step.kind;
    switch (step.kind) {
      case StepKind::kPlan:
        out.last_plan_relation = -1;
        for (Token t : step.interior()) {
          if (vocab.is_relation(t)) {
            out.last_plan_relation = vocab.relation_of(t);
            break;
          }
        }
        break;
      case StepKind::kSubquery: {
        const auto key = parse_subquery(step, vocab);
        out.subqueries.emplace_back(key.relation, key.entity);
        break;
      }
      case StepKind::kRetrieval: {
        out.retrieved_tails.clear();
        const auto body = step.interior();
        for (std::size_t d = 0; d + kDocTokens <= body.size(); d += kDocTokens) {
          const Token tail = body[d + 2];
          out.retrieved_tails.push_back(vocab.is_entity(tail) ? vocab.entity_of(tail) : -1);
        }
        out.top_doc_tail = out.retrieved_tails.empty() ? -1 : out.retrieved_tails.front();
        out.retrieved_since_subanswer = true;
        break;
      }
      case StepKind::kSubanswer:
        ++out.subanswers;
        out.last_subanswer = -1;
        for (Token t : step.interior()) {
          if (vocab.is_entity(t)) {
            out.last_subanswer = vocab.entity_of(t);
            break;
          }
        }
        out.retrieved_since_subanswer = false;
        break;
      case StepKind::kAnswer:
      case StepKind::kMalformed:
        break;
    }
  }
  const std::size_t ptr = 1 + static_cast<std::size_t>(out.subanswers);
  if (ptr < query.size() && vocab.is_relation(query[ptr])) {
    out.pointer_relation = vocab.relation_of(query[ptr]);
  }
  return out;
}

SubqueryKey parse_subquery(const Step& step, const Vocab& vocab) {
  SubqueryKey key;
  for (Token t : step.interior()) {
    if (key.relation < 0 && vocab.is_relation(t)) key.relation = vocab.relation_of(t);
    if (key.entity < 0 && vocab.is_entity(t)) key.entity = vocab.entity_of(t);
  }
  return key;
}

bool is_step_valid(const Step& step, const Vocab& vocab) {
  if (step.tokens.size() < 2 || step.provenance.size() != step.tokens.size()) return false;
  const Provenance expected =
      step.kind == StepKind::kRetrieval ? Provenance::kEnvironment : Provenance::kPolicy;
  for (auto p : step.provenance) {
    if (p != expected) return false;
  }
  if (step.kind == StepKind::kMalformed) return false;
  const Token open = opener_for(step.kind);
  if (step.tokens.front() != open || step.tokens.back() != open + 1) return false;

  const std::vector<Token> body(step.tokens.begin() + 1, step.tokens.end() - 1);
  switch (step.kind) {
    case StepKind::kPlan:
      return body.size() == 1 && vocab.is_relation(body[0]);
    case StepKind::kSubquery:
      return body.size() == 2 && vocab.is_relation(body[0]) && vocab.is_entity(body[1]);
    case StepKind::kSubanswer:
      return body.size() == 1 && vocab.is_entity(body[0]);
    case StepKind::kAnswer: {
      if (body.empty() || static_cast<int>(body.size()) > kMaxAnswerEntities) return false;
      for (Token t : body) {
        if (!vocab.is_entity(t)) return false;
      }
      return true;
    }
    case StepKind::kRetrieval: {
      if (body.size() % kDocTokens != 0) return false;
      for (std::size_t d = 0; d < body.size(); d += kDocTokens) {
        if (!vocab.is_entity(body[d]) || !vocab.is_relation(body[d + 1]) ||
            !vocab.is_entity(body[d + 2])) {
          return false;
        }
      }
      return true;
    }
    case StepKind::kMalformed:
      break;
  }
  return false;
}

bool is_traj_valid(const Trajectory& traj, const Vocab& vocab) {
  int subqueries = 0;
  int retrievals = 0;
  int answers = 0;
  for (const auto& step : traj.steps) {
    if (!is_step_valid(step, vocab)) return false;
    subqueries += step.kind == StepKind::kSubquery;
    retrievals += step.kind == StepKind::kRetrieval;
    answers += step.kind == StepKind::kAnswer;
  }
  return subqueries >= 1 && retrievals >= 1 && answers == 1 &&
         traj.steps.back().kind == StepKind::kAnswer;
}

}  // namespace hoplab
