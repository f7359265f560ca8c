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

#include "hoplab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hoplab/error.hpp"
#include "hoplab/records.hpp"

namespace hoplab::policy {
namespace {

constexpr char kCheckpointMagic[] = "hoplab-policy-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr int kHopSlots = 5;

int kind_slot(StepKind k) { return 1 + static_cast<int>(k); }

}  // namespace

Featurizer::Featurizer(const Vocab& vocab) : vocab_(vocab) {
  const int r = vocab.num_relations();
  const int e = vocab.num_entities();
  int at = 0;
  auto block = [&at](int width) {
    const int start = at;
    at += width;
    return start;
  };
  layout_.last_kind = block(1 + kNumStepKinds);
  layout_.partial_kind = block(1 + kNumStepKinds);
  layout_.partial_pos = block(kMaxStepTokens);
  layout_.position = block(1);
  layout_.step_index = block(kStepIndexSlots);
  layout_.step_scalar = block(1);
  layout_.hop_count = block(kHopSlots);
  layout_.pointer_relation = block(r + 1);
  layout_.query_head = block(e);
  layout_.last_subanswer = block(e + 1);
  layout_.top_doc_tail = block(e + 1);
  layout_.retrieved_bag = block(e);
  layout_.last_plan_relation = block(r + 1);
  layout_.slot_entity = block(3 * e);
  layout_.dim = at;
}

SparseFeatures Featurizer::sparse(const State& state) const {
  const FeatureLayout& L = layout_;
  const int r = vocab_.num_relations();
  const int e = vocab_.num_entities();
  const StateSummary sum = summarize(state, vocab_);
  SparseFeatures f;
  f.reserve(16 + sum.retrieved_tails.size());

  f.emplace_back(L.last_kind + (sum.has_last ? kind_slot(sum.last_kind) : 0), 1.0);
  const int partial_len = state.in_step() ? static_cast<int>(state.partial().tokens.size()) : 0;
  f.emplace_back(L.partial_kind + (state.in_step() ? kind_slot(state.partial().kind) : 0), 1.0);
  f.emplace_back(L.partial_pos + std::min(partial_len, kMaxStepTokens - 1), 1.0);
  if (partial_len > 0) {
    f.emplace_back(L.position, static_cast<double>(partial_len) / kMaxStepTokens);
  }
  const int t = state.step_index();
  f.emplace_back(L.step_index + std::min(t, kStepIndexSlots - 1), 1.0);
  if (t > 0) f.emplace_back(L.step_scalar, static_cast<double>(t) / kStepIndexSlots);
  const int hops = std::clamp(state.hops(), 1, kHopSlots);
  f.emplace_back(L.hop_count + hops - 1, 1.0);
  f.emplace_back(L.pointer_relation + (sum.pointer_relation >= 0 ? sum.pointer_relation : r),
                 1.0);
  if (sum.query_head >= 0) f.emplace_back(L.query_head + sum.query_head, 1.0);
  f.emplace_back(L.last_subanswer + (sum.last_subanswer >= 0 ? sum.last_subanswer : e), 1.0);
  f.emplace_back(L.top_doc_tail + (sum.top_doc_tail >= 0 ? sum.top_doc_tail : e), 1.0);
  if (!sum.retrieved_tails.empty()) {
    const double w = 1.0 / static_cast<double>(sum.retrieved_tails.size());
    // Merge duplicates so each feature index appears once.
    std::vector<int> tails;
    for (int tail : sum.retrieved_tails) {
      if (tail >= 0) tails.push_back(tail);
    }
    std::sort(tails.begin(), tails.end());
    for (std::size_t i = 0; i < tails.size();) {
      std::size_t j = i;
      while (j < tails.size() && tails[j] == tails[i]) ++j;
      f.emplace_back(L.retrieved_bag + tails[i], w * static_cast<double>(j - i));
      i = j;
    }
  }
  f.emplace_back(
      L.last_plan_relation + (sum.last_plan_relation >= 0 ? sum.last_plan_relation : r), 1.0);
  if (state.in_step()) {
    int slot = -1;
    int entity = -1;
    switch (state.partial().kind) {
      case StepKind::kSubquery:
        slot = 0;
        entity = sum.subanswers > 0 ? sum.last_subanswer : sum.query_head;
        break;
      case StepKind::kSubanswer:
        slot = 1;
        entity = sum.top_doc_tail;
        break;
      case StepKind::kAnswer:
        slot = 2;
        entity = sum.last_subanswer;
        break;
      default:
        break;
    }
    if (entity >= 0) f.emplace_back(L.slot_entity + slot * e + entity, kSlotFeatureValue);
  }
  return f;
}

std::vector<double> Featurizer::operator()(const State& state) const {
  std::vector<double> dense(layout_.dim, 0.0);
  for (const auto& [i, v] : sparse(state)) dense[i] += v;
  return dense;
}

PolicyParams PolicyParams::zeros(int vocab_size, int feature_dim) {
  PolicyParams p;
  p.vocab_size = vocab_size;
  p.feature_dim = feature_dim;
  p.weight.assign(static_cast<std::size_t>(vocab_size) * feature_dim, 0.0);
  p.bias.assign(vocab_size, 0.0);
  return p;
}

bool PolicyParams::all_finite() const {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(weight.begin(), weight.end(), finite) &&
         std::all_of(bias.begin(), bias.end(), finite);
}

void PolicyParams::axpy(double a, const PolicyParams& x) {
  if (x.vocab_size != vocab_size || x.feature_dim != feature_dim) {
    throw InvalidArgument("policy params: shape mismatch in axpy");
  }
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] += a * x.weight[i];
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += a * x.bias[i];
}

void PolicyParams::scale(double a) {
  for (auto& w : weight) w *= a;
  for (auto& b : bias) b *= a;
}

double PolicyParams::max_abs() const {
  double m = 0.0;
  for (double w : weight) m = std::max(m, std::abs(w));
  for (double b : bias) m = std::max(m, std::abs(b));
  return m;
}

Policy::Policy(const Vocab& vocab, bool masking_on)
    : featurizer(vocab),
      params(PolicyParams::zeros(vocab.size(), featurizer.dim())),
      masking(masking_on) {}

Policy::Policy(Featurizer f, PolicyParams p, bool masking_on)
    : featurizer(std::move(f)), params(std::move(p)), masking(masking_on) {
  if (params.vocab_size != featurizer.vocab().size() || params.feature_dim != featurizer.dim()) {
    throw InvalidArgument("policy: parameter shape does not match vocabulary/featurizer");
  }
}

std::vector<char> structural_mask(const State& state, const Vocab& vocab, bool masking) {
  const int v = vocab.size();
  std::vector<char> mask(v, masking ? 0 : 1);
  if (!masking) return mask;
  auto allow_relations = [&] {
    for (int r = 0; r < vocab.num_relations(); ++r) mask[vocab.relation_token(r)] = 1;
  };
  auto allow_entities = [&] {
    for (int e = 0; e < vocab.num_entities(); ++e) mask[vocab.entity_token(e)] = 1;
  };
  auto allow = [&](Control c) { mask[token(c)] = 1; };

  if (!state.in_step()) {
    allow(Control::kStepOpen);
    allow(Control::kSubqueryOpen);
    allow(Control::kSubanswerOpen);
    allow(Control::kAnswerOpen);
    return mask;
  }
  const int n = static_cast<int>(state.partial().tokens.size());
  switch (state.partial().kind) {
    case StepKind::kPlan:
      if (n == 1) allow_relations();
      else allow(Control::kStepClose);
      break;
    case StepKind::kSubquery:
      if (n == 1) allow_relations();
      else if (n == 2) allow_entities();
      else allow(Control::kSubqueryClose);
      break;
    case StepKind::kSubanswer:
      if (n == 1) allow_entities();
      else allow(Control::kSubanswerClose);
      break;
    case StepKind::kAnswer:
      if (n <= kMaxAnswerEntities) allow_entities();
      if (n >= 2) allow(Control::kAnswerClose);
      break;
    case StepKind::kRetrieval:
    case StepKind::kMalformed:
      std::fill(mask.begin(), mask.end(), 1);
      break;
  }
  return mask;
}

std::vector<double> action_logits(const PolicyParams& params, const SparseFeatures& features) {
  std::vector<double> logits(params.bias);
  const int v = params.vocab_size;
  for (const auto& [i, x] : features) {
    if (i < 0 || i >= params.feature_dim) {
      throw InvalidArgument("action_logits: feature index outside parameter shape");
    }
    const double* row = &params.weight[static_cast<std::size_t>(i) * v];
    for (int t = 0; t < v; ++t) logits[t] += x * row[t];
  }
  return logits;
}

std::vector<double> action_logits(const Policy& policy, const State& state) {
  if (policy.params.feature_dim != policy.featurizer.dim() ||
      policy.params.vocab_size != policy.vocab().size()) {
    throw InvalidArgument("action_logits: parameter shape mismatch");
  }
  return action_logits(policy.params, policy.featurizer.sparse(state));
}

std::vector<double> distribution(std::span<const double> logits, std::span<const char> mask,
                                 double temperature) {
  if (logits.size() != mask.size()) throw InvalidArgument("distribution: mask size mismatch");
  if (temperature < 0.0) throw InvalidArgument("distribution: negative temperature");
  std::vector<double> p(logits.size(), 0.0);
  int best = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i] && (best < 0 || logits[i] > logits[best])) best = static_cast<int>(i);
  }
  if (best < 0) throw InvalidArgument("distribution: every token is masked");
  if (temperature == 0.0) {
    p[best] = 1.0;
    return p;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    p[i] = std::exp((logits[i] - logits[best]) / temperature);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

double TokenEval::log_prob(Token t) const {
  if (t < 0 || t >= static_cast<Token>(probs.size()) || !mask[t]) {
    throw InvalidArgument("log_prob: token " + std::to_string(t) + " is masked");
  }
  return std::log(probs[t]);
}

TokenEval evaluate(const Policy& policy, const State& state) {
  TokenEval ev;
  ev.features = policy.featurizer.sparse(state);
  ev.mask = structural_mask(state, policy.vocab(), policy.masking);
  const auto logits = action_logits(policy.params, ev.features);
  // Log-space normalization keeps tiny probabilities representable.
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (ev.mask[i]) hi = std::max(hi, logits[i]);
  }
  if (!std::isfinite(hi)) throw Error(ErrorKind::kDivergence, "policy logits are not finite");
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (ev.mask[i]) z += std::exp(logits[i] - hi);
  }
  const double log_z = hi + std::log(z);
  ev.probs.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (ev.mask[i]) ev.probs[i] = std::exp(logits[i] - log_z);
  }
  return ev;
}

double log_prob(const Policy& policy, const State& state, Token token) {
  const TokenEval ev = evaluate(policy, state);
  // Recompute from logits for full precision on very small probabilities.
  const auto logits = action_logits(policy.params, ev.features);
  if (token < 0 || token >= static_cast<Token>(logits.size()) || !ev.mask[token]) {
    throw InvalidArgument("log_prob: token " + std::to_string(token) + " is masked");
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (ev.mask[i]) hi = std::max(hi, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (ev.mask[i]) z += std::exp(logits[i] - hi);
  }
  return logits[token] - hi - std::log(z);
}

void accumulate_log_prob_grad(const TokenEval& eval, Token token, double scale,
                              PolicyParams& grad) {
  const int v = grad.vocab_size;
  if (token < 0 || token >= v || !eval.mask[token]) {
    throw InvalidArgument("log_prob_grad: token " + std::to_string(token) + " is masked");
  }
  // d log p(y) / d logit_t = [t == y] - p_t on allowed tokens, 0 on masked.
  std::vector<double> g(v, 0.0);
  for (int t = 0; t < v; ++t) {
    if (eval.mask[t]) g[t] = scale * ((t == token ? 1.0 : 0.0) - eval.probs[t]);
  }
  for (int t = 0; t < v; ++t) grad.bias[t] += g[t];
  for (const auto& [i, x] : eval.features) {
    double* row = &grad.weight[static_cast<std::size_t>(i) * v];
    for (int t = 0; t < v; ++t) row[t] += x * g[t];
  }
}

PolicyParams log_prob_grad(const Policy& policy, const State& state, Token token) {
  PolicyParams grad = PolicyParams::zeros(policy.params.vocab_size, policy.params.feature_dim);
  accumulate_log_prob_grad(evaluate(policy, state), token, 1.0, grad);
  return grad;
}

std::pair<Token, double> sample_token(const Policy& policy, const State& state,
                                      double temperature, Rng& rng) {
  const TokenEval ev = evaluate(policy, state);
  Token tok;
  if (temperature == 1.0) {
    tok = static_cast<Token>(rng.categorical(ev.probs));
  } else {
    const auto logits = action_logits(policy.params, ev.features);
    const auto p = distribution(logits, ev.mask, temperature);
    if (temperature == 0.0) {
      tok = static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      tok = static_cast<Token>(rng.categorical(p));
    }
  }
  return {tok, std::log(ev.probs[tok])};
}

void generate_step(const Policy& policy, const env::World& world, State& state,
                   double temperature, int k_docs, Rng& rng) {
  if (state.terminal()) throw InvalidArgument("generate_step: state is terminal");
  if (state.awaiting_retrieval()) {
    state.append_retrieval(env::document_tokens(
        env::retrieve(world, parse_subquery(state.steps().back(), world.vocab()), k_docs)));
  }
  for (;;) {
    const auto [tok, lp] = sample_token(policy, state, temperature, rng);
    if (state.push(tok, lp)) break;
  }
  if (state.awaiting_retrieval()) {
    state.append_retrieval(env::document_tokens(
        env::retrieve(world, parse_subquery(state.steps().back(), world.vocab()), k_docs)));
  }
}

void continue_rollout(const Policy& policy, const env::World& world, State& state,
                      const RolloutOptions& options, Rng& rng) {
  if (options.max_steps < 1) throw InvalidArgument("rollout: max_steps must be >= 1");
  while (!state.terminal() && state.policy_steps() < options.max_steps) {
    generate_step(policy, world, state, options.temperature, options.k_docs, rng);
  }
}

Trajectory rollout(const Policy& policy, const env::World& world,
                   const env::QueryInstance& query, const RolloutOptions& options, Rng& rng) {
  State state(query.id, query.query_tokens);
  continue_rollout(policy, world, state, options, rng);
  return state.to_trajectory();
}

PolicyParams oracle_params(const Featurizer& featurizer, double scale) {
  const Vocab& v = featurizer.vocab();
  const FeatureLayout& L = featurizer.layout();
  const int r = v.num_relations();
  const int e = v.num_entities();
  const double s = scale;
  PolicyParams p = PolicyParams::zeros(v.size(), featurizer.dim());

  // Workflow between steps: plan -> subquery -> (retrieval) -> subanswer,
  // and after a subanswer either the next plan or, with no hop left, the
  // answer.
  p.w(L.last_kind + 0, token(Control::kStepOpen)) = s;
  p.w(L.last_kind + kind_slot(StepKind::kSubanswer), token(Control::kStepOpen)) = s;
  p.w(L.pointer_relation + r, token(Control::kStepOpen)) = -2.0 * s;
  p.w(L.pointer_relation + r, token(Control::kAnswerOpen)) = s;
  p.w(L.last_kind + kind_slot(StepKind::kPlan), token(Control::kSubqueryOpen)) = s;
  p.w(L.last_kind + kind_slot(StepKind::kRetrieval), token(Control::kSubanswerOpen)) = s;

  // Relations follow the hop pointer; entities copy the gated slot (bridge,
  // rank-0 document tail, last subanswer).
  for (int rel = 0; rel < r; ++rel) {
    p.w(L.pointer_relation + rel, v.relation_token(rel)) = s;
  }
  for (int slot = 0; slot < 3; ++slot) {
    for (int ent = 0; ent < e; ++ent) {
      p.w(L.slot_entity + slot * e + ent, v.entity_token(ent)) = s / kSlotFeatureValue;
    }
  }
  // One-entity answers: closing beats a second entity.
  p.w(L.partial_kind + kind_slot(StepKind::kAnswer), token(Control::kAnswerClose)) = 5.0 * s;
  return p;
}

void write_checkpoint(std::ostream& out, const PolicyParams& params) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "vocab_size " << params.vocab_size << '\n';
  out << "feature_dim " << params.feature_dim << '\n';
  out << "bias";
  for (double b : params.bias) out << ' ' << records::hex_double(b);
  out << '\n';
  for (int f = 0; f < params.feature_dim; ++f) {
    out << "w" << f;
    for (int t = 0; t < params.vocab_size; ++t) out << ' ' << records::hex_double(params.w(f, t));
    out << '\n';
  }
}

PolicyParams read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw FormatError("policy checkpoint: bad header");
  if (version != kCheckpointVersion) {
    throw FormatError("policy checkpoint: unsupported version " + std::to_string(version));
  }
  std::string key;
  int vocab_size = 0;
  int feature_dim = 0;
  in >> key >> vocab_size;
  if (key != "vocab_size" || vocab_size <= 0) throw FormatError("policy checkpoint: vocab_size");
  in >> key >> feature_dim;
  if (key != "feature_dim" || feature_dim <= 0) throw FormatError("policy checkpoint: feature_dim");
  PolicyParams p = PolicyParams::zeros(vocab_size, feature_dim);
  std::string word;
  in >> key;
  if (key != "bias") throw FormatError("policy checkpoint: missing bias row");
  for (int t = 0; t < vocab_size; ++t) {
    if (!(in >> word)) throw FormatError("policy checkpoint: truncated bias row");
    p.bias[t] = records::parse_double(word);
  }
  for (int f = 0; f < feature_dim; ++f) {
    in >> key;
    if (key != "w" + std::to_string(f)) throw FormatError("policy checkpoint: bad weight row");
    for (int t = 0; t < vocab_size; ++t) {
      if (!(in >> word)) throw FormatError("policy checkpoint: truncated weight row");
      p.w(f, t) = records::parse_double(word);
    }
  }
  if (!p.all_finite()) throw FormatError("policy checkpoint: non-finite entry");
  return p;
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(out, params);
  if (!out) throw IoError("write failed: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace hoplab::policy
