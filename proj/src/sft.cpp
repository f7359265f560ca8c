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

#include "hoplab/sft.hpp"

#include <cmath>
#include <numeric>

#include "hoplab/error.hpp"
#include "hoplab/parallel.hpp"
#include "hoplab/records.hpp"

namespace hoplab::sft {

using policy::Policy;
using policy::PolicyParams;

SftExample make_example(const State& context, const std::vector<Step>& steps) {
  SftExample ex;
  ex.context = context;
  for (const Step& s : steps) {
    if (!s.is_policy()) throw InvalidArgument("sft example: retrieval step used as a target");
    for (Token t : s.tokens) {
      ex.target.push_back(t);
      ex.control.push_back(Vocab::is_control(t) ? 1 : 0);
    }
  }
  if (ex.target.empty()) throw InvalidArgument("sft example: empty target");
  return ex;
}

std::vector<SftExample> blocks_from_trajectory(const Trajectory& traj) {
  std::vector<SftExample> out;
  State context(traj.query_id, traj.query_tokens);
  std::vector<Step> block;
  State block_start = context;
  for (const Step& s : traj.steps) {
    if (!s.is_policy()) {
      context.append_step(s);
      block_start = context;
      continue;
    }
    block.push_back(s);
    context.append_step(s);
    if (s.kind != StepKind::kPlan) {
      out.push_back(make_example(block_start, block));
      block.clear();
      block_start = context;
    }
  }
  if (!block.empty()) out.push_back(make_example(block_start, block));
  return out;
}

std::vector<SftExample> build_sft_dataset(const env::World& world,
                                          const std::vector<env::QueryInstance>& queries,
                                          int k_docs) {
  std::vector<SftExample> out;
  for (const auto& q : queries) {
    auto blocks = blocks_from_trajectory(env::oracle_trajectory(world, q, k_docs));
    out.insert(out.end(), std::make_move_iterator(blocks.begin()),
               std::make_move_iterator(blocks.end()));
  }
  return out;
}

namespace {

// Teacher-forced pass over one example; adds scale * d(weighted NLL) to grad
// when given.
SftLoss forward(const Policy& policy, const SftExample& ex, double lambda, double scale,
                PolicyParams* grad) {
  if (ex.target.size() != ex.control.size()) {
    throw InvalidArgument("sft example: control flags do not align with target");
  }
  SftLoss out;
  State state = ex.context;
  for (std::size_t i = 0; i < ex.target.size(); ++i) {
    const Token tok = ex.target[i];
    const policy::TokenEval ev = policy::evaluate(policy, state);
    const double nll = -ev.log_prob(tok);
    const bool ctrl = ex.control[i] != 0;
    (ctrl ? out.control_nll : out.normal_nll) += nll;
    if (grad) {
      policy::accumulate_log_prob_grad(ev, tok, -scale * (ctrl ? lambda : 1.0), *grad);
    }
    state.push(tok);
    ++out.tokens;
  }
  out.loss = out.normal_nll + lambda * out.control_nll;
  return out;
}

}  // namespace

SftLoss example_nll(const Policy& policy, const SftExample& ex, double lambda) {
  return forward(policy, ex, lambda, 0.0, nullptr);
}

SftLoss sft_loss(const Policy& policy, const std::vector<SftExample>& batch, double lambda,
                 PolicyParams* grad, int num_threads) {
  if (batch.empty()) throw InvalidArgument("sft_loss: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  struct Acc {
    SftLoss loss;
    PolicyParams grad;
  };
  Acc zero;
  if (grad) zero.grad = PolicyParams::zeros(policy.params.vocab_size, policy.params.feature_dim);
  auto chunks = chunked_accumulate(batch.size(), 16, num_threads, zero,
                                   [&](std::size_t i, Acc& acc) {
                                     const SftLoss l = forward(policy, batch[i], lambda, scale,
                                                               grad ? &acc.grad : nullptr);
                                     acc.loss.control_nll += l.control_nll;
                                     acc.loss.normal_nll += l.normal_nll;
                                     acc.loss.tokens += l.tokens;
                                   });
  SftLoss total;
  if (grad) *grad = PolicyParams::zeros(policy.params.vocab_size, policy.params.feature_dim);
  for (const Acc& a : chunks) {
    total.control_nll += a.loss.control_nll;
    total.normal_nll += a.loss.normal_nll;
    total.tokens += a.loss.tokens;
    if (grad) grad->axpy(1.0, a.grad);
  }
  total.control_nll *= scale;
  total.normal_nll *= scale;
  total.loss = total.normal_nll + lambda * total.control_nll;
  return total;
}

PolicyParams train_sft(const Policy& init, const std::vector<SftExample>& dataset,
                       const SftConfig& config, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw InvalidArgument("train_sft: empty dataset");
  if (config.lambda < 1.0) throw InvalidArgument("train_sft: lambda must be >= 1");
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("train_sft: learning rate must be > 0");
  if (config.epochs < 0) throw InvalidArgument("train_sft: epochs must be >= 0");

  Policy policy = init;
  const std::size_t batch =
      config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size) : dataset.size();
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  auto report = [&](int epoch) {
    const SftLoss l = sft_loss(policy, dataset, config.lambda, nullptr, config.num_threads);
    if (!std::isfinite(l.loss)) {
      throw Error(ErrorKind::kDivergence, "sft: non-finite loss at epoch " +
                                              std::to_string(epoch) + " (control_nll=" +
                                              records::format_double(l.control_nll) +
                                              ", normal_nll=" +
                                              records::format_double(l.normal_nll) + ")");
    }
    if (on_epoch) on_epoch(EpochRecord{epoch, l}, policy.params);
  };
  report(0);

  std::vector<SftExample> mb;
  PolicyParams grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "sft-epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        mb.push_back(dataset[order[i]]);
      }
      const SftLoss l = sft_loss(policy, mb, config.lambda, &grad, config.num_threads);
      policy.params.axpy(-config.learning_rate, grad);
      if (!std::isfinite(l.loss) || !policy.params.all_finite()) {
        throw Error(ErrorKind::kDivergence,
                    "sft: diverged at epoch " + std::to_string(epoch) + ", batch offset " +
                        std::to_string(start) + " (loss=" + records::format_double(l.loss) +
                        ", max |param|=" + records::format_double(policy.params.max_abs()) + ")");
      }
    }
    report(epoch);
  }
  return policy.params;
}

nlohmann::json example_to_json(const SftExample& ex, const Vocab& vocab) {
  nlohmann::json j = records::state_to_json(ex.context, vocab);
  std::string control;
  for (char c : ex.control) control.push_back(c ? '1' : '0');
  j["target"] = vocab.names(ex.target);
  j["control"] = control;
  return j;
}

SftExample example_from_json(const nlohmann::json& j, const Vocab& vocab) {
  SftExample ex;
  ex.context = records::state_from_json(j, vocab);
  ex.target = vocab.parse_all(j.at("target").get<std::vector<std::string>>());
  const std::string control = j.at("control");
  if (control.size() != ex.target.size()) throw FormatError("sft record: control length mismatch");
  for (std::size_t i = 0; i < control.size(); ++i) {
    const bool flag = control[i] == '1';
    if ((control[i] != '0' && control[i] != '1') || flag != Vocab::is_control(ex.target[i])) {
      throw FormatError("sft record: control flags inconsistent with vocabulary");
    }
    ex.control.push_back(flag ? 1 : 0);
  }
  if (ex.target.empty()) throw FormatError("sft record: empty target");
  return ex;
}

}  // namespace hoplab::sft
