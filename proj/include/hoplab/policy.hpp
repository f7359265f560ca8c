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

#ifndef HOPLAB_POLICY_HPP_
#define HOPLAB_POLICY_HPP_

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hoplab/rng.hpp"
#include "hoplab/synth_env.hpp"
#include "hoplab/trajectory.hpp"
#include "hoplab/vocab.hpp"

namespace hoplab::policy {

// Offsets of the feature blocks. One-hot blocks reserve a trailing "none"
// slot where the quantity may be absent.
struct FeatureLayout {
  int last_kind = 0;       // 1 + kNumStepKinds (slot 0: no step yet)
  int partial_kind = 0;    // 1 + kNumStepKinds (slot 0: between steps)
  int partial_pos = 0;     // kMaxStepTokens one-hot
  int position = 0;        // scalar: partial length / kMaxStepTokens
  int step_index = 0;      // one-hot, capped
  int step_scalar = 0;     // scalar: step index / kStepIndexSlots
  int hop_count = 0;       // 5 slots, query hop count 1..5
  int pointer_relation = 0;  // R + 1: query relation of the current hop
  int query_head = 0;        // E
  int last_subanswer = 0;    // E + 1
  int top_doc_tail = 0;      // E + 1: tail entity of the rank-0 document
  int retrieved_bag = 0;     // E: tails of the last retrieval, weight 1/k
  int last_plan_relation = 0;  // R + 1
  // 3 * E, gated by the open step: the bridge entity inside a subquery, the
  // rank-0 document tail inside a subanswer, the last subanswer inside an
  // answer.
  int slot_entity = 0;
  int dim = 0;
};

inline constexpr int kStepIndexSlots = 16;
// Activation of the slot_entity block. Larger than the one-hot blocks so the
// entity-specific evidence outweighs the shared features.
inline constexpr double kSlotFeatureValue = 10.0;

using SparseFeatures = std::vector<std::pair<int, double>>;

// Fixed-dimension state features. Only the query tokens, never gold data,
// enter the representation; the dimension does not grow with history.
class Featurizer {
 public:
  Featurizer() = default;
  explicit Featurizer(const Vocab& vocab);

  int dim() const { return layout_.dim; }
  const Vocab& vocab() const { return vocab_; }
  const FeatureLayout& layout() const { return layout_; }

  SparseFeatures sparse(const State& state) const;
  std::vector<double> operator()(const State& state) const;

 private:
  Vocab vocab_;
  FeatureLayout layout_;
};

// Linear-softmax parameters: logits = W . features + b. The weight is stored
// feature-major, weight[f * vocab_size + token], so sparse features touch
// contiguous rows. Also used as the gradient type.
struct PolicyParams {
  int vocab_size = 0;
  int feature_dim = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static PolicyParams zeros(int vocab_size, int feature_dim);
  double& w(int feature, Token t) { return weight[static_cast<std::size_t>(feature) * vocab_size + t]; }
  double w(int feature, Token t) const { return weight[static_cast<std::size_t>(feature) * vocab_size + t]; }

  bool all_finite() const;
  void axpy(double a, const PolicyParams& x);  // *this += a * x
  void scale(double a);
  double max_abs() const;
  std::size_t size() const { return weight.size() + bias.size(); }
  // Flat view helpers for finite-difference checks: [weight..., bias...].
  double& flat(std::size_t i) { return i < weight.size() ? weight[i] : bias[i - weight.size()]; }
  double flat(std::size_t i) const { return i < weight.size() ? weight[i] : bias[i - weight.size()]; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

struct Policy {
  Featurizer featurizer;
  PolicyParams params;
  // Structural masking of schema-violating continuations during sampling
  // and in every log-probability.
  bool masking = true;

  Policy() = default;
  Policy(const Vocab& vocab, bool masking = true);
  Policy(Featurizer f, PolicyParams p, bool masking = true);
  const Vocab& vocab() const { return featurizer.vocab(); }
};

// Tokens the block grammar allows next (1 = allowed). With masking off every
// token is allowed.
std::vector<char> structural_mask(const State& state, const Vocab& vocab, bool masking);

std::vector<double> action_logits(const PolicyParams& params, const SparseFeatures& features);
std::vector<double> action_logits(const Policy& policy, const State& state);

// Sampling distribution: softmax(logits / temperature) over allowed tokens,
// exactly zero on masked ones. Temperature 0 is greedy (lowest id on ties).
std::vector<double> distribution(std::span<const double> logits, std::span<const char> mask,
                                 double temperature);

// One evaluated decision: features, temperature-1 probabilities, mask.
struct TokenEval {
  SparseFeatures features;
  std::vector<char> mask;
  std::vector<double> probs;
  double log_prob(Token t) const;
};
TokenEval evaluate(const Policy& policy, const State& state);

// log pi(token | state) at temperature 1. Throws on a masked token.
double log_prob(const Policy& policy, const State& state, Token token);
PolicyParams log_prob_grad(const Policy& policy, const State& state, Token token);
// grad += scale * d log pi(token) / d params, reusing an evaluation.
void accumulate_log_prob_grad(const TokenEval& eval, Token token, double scale,
                              PolicyParams& grad);

struct RolloutOptions {
  int max_steps = 12;   // policy steps; retrieval blocks are not counted
  int k_docs = 3;
  double temperature = 1.0;
};

// Samples one token; returns (token, log pi at temperature 1).
std::pair<Token, double> sample_token(const Policy& policy, const State& state,
                                      double temperature, Rng& rng);
// Generates one full policy step and, after a subquery, the retrieval block.
void generate_step(const Policy& policy, const env::World& world, State& state,
                   double temperature, int k_docs, Rng& rng);
void continue_rollout(const Policy& policy, const env::World& world, State& state,
                      const RolloutOptions& options, Rng& rng);
Trajectory rollout(const Policy& policy, const env::World& world,
                   const env::QueryInstance& query, const RolloutOptions& options, Rng& rng);

// Hand-built parameters that put almost all mass on the planner oracle's
// tokens (masking on). Useful as a known-good policy.
PolicyParams oracle_params(const Featurizer& featurizer, double scale = 20.0);

// Versioned text checkpoint with hexadecimal floats; save -> load -> save is
// byte-identical.
void write_checkpoint(std::ostream& out, const PolicyParams& params);
PolicyParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace hoplab::policy

#endif  // HOPLAB_POLICY_HPP_
