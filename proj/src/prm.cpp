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

#include "hoplab/prm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hoplab/error.hpp"
#include "hoplab/records.hpp"

namespace hoplab::prm {
namespace {

constexpr char kMagic[] = "hoplab-prm-checkpoint";
constexpr int kVersion = 1;

StepKind workflow_kind(const State& context, const StateSummary& sum) {
  const Step* last = nullptr;
  for (const auto& s : context.steps()) {
    if (s.kind != StepKind::kMalformed) last = &s;
  }
  if (last == nullptr || last->kind == StepKind::kSubanswer) {
    return sum.pointer_relation >= 0 ? StepKind::kPlan : StepKind::kAnswer;
  }
  switch (last->kind) {
    case StepKind::kPlan: return StepKind::kSubquery;
    case StepKind::kSubquery:
    case StepKind::kRetrieval: return StepKind::kSubanswer;
    default: return StepKind::kAnswer;
  }
}

int first_entity(const std::vector<Token>& body, const Vocab& v) {
  for (Token t : body) {
    if (v.is_entity(t)) return v.entity_of(t);
  }
  return -1;
}

int first_relation(const std::vector<Token>& body, const Vocab& v) {
  for (Token t : body) {
    if (v.is_relation(t)) return v.relation_of(t);
  }
  return -1;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

PrmParams PrmParams::zeros(int dim) {
  PrmParams p;
  p.weight.assign(dim, 0.0);
  return p;
}

bool PrmParams::all_finite() const {
  return std::isfinite(bias) &&
         std::all_of(weight.begin(), weight.end(), [](double x) { return std::isfinite(x); });
}

PrmFeaturizer::PrmFeaturizer(const Vocab& vocab) : base_(vocab) {
  kind_offset_ = base_.dim();
  transition_offset_ = kind_offset_ + kNumStepKinds;
  match_offset_ = transition_offset_ + (1 + kNumStepKinds) * kNumStepKinds;
  dim_ = match_offset_ + kNumMatchFeatures;
}

std::vector<double> PrmFeaturizer::operator()(const State& context, const Step& step) const {
  const Vocab& v = vocab();
  std::vector<double> f = base_(context);
  f.resize(dim_, 0.0);
  const int kind = static_cast<int>(step.kind);
  f[kind_offset_ + kind] = 1.0;
  const StateSummary sum = summarize(context, v);
  const int prev = sum.has_last ? 1 + static_cast<int>(sum.last_kind) : 0;
  f[transition_offset_ + prev * kNumStepKinds + kind] = 1.0;

  double* m = &f[match_offset_];
  const auto body = step.interior();
  const int bridge = sum.subanswers > 0 ? sum.last_subanswer : sum.query_head;
  m[0] = step.kind == workflow_kind(context, sum) ? 1.0 : 0.0;
  switch (step.kind) {
    case StepKind::kPlan:
      m[1] = sum.pointer_relation >= 0 && first_relation(body, v) == sum.pointer_relation;
      m[11] = sum.pointer_relation < 0;
      break;
    case StepKind::kSubquery: {
      const SubqueryKey key = parse_subquery(step, v);
      m[2] = sum.pointer_relation >= 0 && key.relation == sum.pointer_relation;
      m[3] = bridge >= 0 && key.entity == bridge;
      m[4] = std::any_of(sum.subqueries.begin(), sum.subqueries.end(), [&](const auto& q) {
        return q.first == key.relation && q.second == key.entity;
      });
      m[11] = sum.pointer_relation < 0;
      break;
    }
    case StepKind::kSubanswer: {
      const int e = first_entity(body, v);
      m[5] = e >= 0 && e == sum.top_doc_tail;
      m[6] = e >= 0 && std::find(sum.retrieved_tails.begin(), sum.retrieved_tails.end(), e) !=
                           sum.retrieved_tails.end();
      m[12] = !sum.retrieved_since_subanswer;
      break;
    }
    case StepKind::kAnswer: {
      int entities = 0;
      for (Token t : body) entities += v.is_entity(t) ? 1 : 0;
      m[7] = entities == 1 && first_entity(body, v) == sum.last_subanswer &&
             sum.last_subanswer >= 0;
      m[8] = sum.pointer_relation >= 0;
      m[9] = entities > 1;
      break;
    }
    default:
      break;
  }
  m[10] = is_step_valid(step, v) ? 1.0 : 0.0;
  return f;
}

PrmModel::PrmModel(const Vocab& vocab)
    : featurizer(vocab), params(PrmParams::zeros(featurizer.dim())) {}

PrmModel::PrmModel(PrmFeaturizer f, PrmParams p) : featurizer(std::move(f)), params(std::move(p)) {
  if (static_cast<int>(params.weight.size()) != featurizer.dim()) {
    throw InvalidArgument("prm: parameter size does not match the featurizer");
  }
}

double PrmModel::score(const State& context, const Step& step) const {
  return dot(params.weight, featurizer(context, step)) + params.bias;
}

double prm_score(const PrmModel& model, const State& context, const Step& step) {
  return model.score(context, step);
}

double ranking_loss_from_margin(double margin) {
  // softplus(-margin) without overflow in either tail.
  const double x = -margin;
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double ranking_loss(const PrmModel& model, const mcts::PreferencePair& pair) {
  return ranking_loss_from_margin(model.score(pair.context, pair.chosen) -
                                  model.score(pair.context, pair.rejected));
}

PrmParams ranking_loss_grad(const PrmModel& model, const mcts::PreferencePair& pair) {
  const auto fc = model.featurizer(pair.context, pair.chosen);
  const auto fr = model.featurizer(pair.context, pair.rejected);
  const double margin = dot(model.params.weight, fc) - dot(model.params.weight, fr);
  // d/dmargin softplus(-margin) = -sigmoid(-margin)
  const double g = -1.0 / (1.0 + std::exp(margin));
  PrmParams out = PrmParams::zeros(model.featurizer.dim());
  for (std::size_t i = 0; i < fc.size(); ++i) out.weight[i] = g * (fc[i] - fr[i]);
  out.bias = 0.0;
  return out;
}

double pair_accuracy(const PrmModel& model, const std::vector<mcts::PreferencePair>& pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    hits += model.score(p.context, p.chosen) > model.score(p.context, p.rejected) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double mean_ranking_loss(const PrmModel& model, const std::vector<mcts::PreferencePair>& pairs) {
  if (pairs.empty()) throw InvalidArgument("prm: empty pair set");
  double s = 0.0;
  for (const auto& p : pairs) s += ranking_loss(model, p);
  return s / static_cast<double>(pairs.size());
}

PrmParams train_prm(const PrmModel& init, const std::vector<mcts::PreferencePair>& pairs,
                    const PrmConfig& config, const PrmEpochCallback& on_epoch) {
  if (pairs.empty()) throw InvalidArgument("train_prm: need at least one pair");
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("train_prm: learning rate must be > 0");
  if (config.epochs < 0) throw InvalidArgument("train_prm: epochs must be >= 0");
  const int dim = init.featurizer.dim();
  // The loss only sees feature differences, so they are computed once.
  std::vector<std::vector<double>> diff(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto fc = init.featurizer(pairs[i].context, pairs[i].chosen);
    const auto fr = init.featurizer(pairs[i].context, pairs[i].rejected);
    for (int k = 0; k < dim; ++k) fc[k] -= fr[k];
    diff[i] = std::move(fc);
  }
  PrmParams p = init.params;
  auto stats = [&](int epoch) {
    PrmEpoch e;
    e.epoch = epoch;
    std::size_t hits = 0;
    for (const auto& d : diff) {
      const double margin = dot(p.weight, d);
      e.loss += ranking_loss_from_margin(margin);
      hits += margin > 0 ? 1 : 0;
    }
    e.loss /= static_cast<double>(diff.size());
    e.accuracy = static_cast<double>(hits) / static_cast<double>(diff.size());
    if (!std::isfinite(e.loss)) {
      throw Error(ErrorKind::kDivergence,
                  "prm: non-finite ranking loss at epoch " + std::to_string(epoch));
    }
    if (on_epoch) on_epoch(e);
  };
  stats(0);

  const std::size_t batch =
      config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size) : diff.size();
  std::vector<std::size_t> order(diff.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(dim);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (batch < diff.size()) {
      Rng rng(derive_seed(config.seed, "prm-epoch", static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order.begin(), order.end());
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& d = diff[order[i]];
        const double g = -1.0 / (1.0 + std::exp(dot(p.weight, d)));
        for (int k = 0; k < dim; ++k) grad[k] += g * d[k];
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (int k = 0; k < dim; ++k) {
        p.weight[k] -= config.learning_rate * (grad[k] * scale + config.l2 * p.weight[k]);
      }
    }
    if (!p.all_finite()) {
      throw Error(ErrorKind::kDivergence,
                  "prm: non-finite parameters at epoch " + std::to_string(epoch));
    }
    stats(epoch);
  }
  // The ranking loss ignores the bias and barely constrains the step-kind
  // indicators. Both are set so that chosen and rejected training steps
  // straddle zero on average, globally and then within each step kind, which
  // gives a threshold of 0 its meaning for every kind of step.
  std::vector<double> chosen(pairs.size()), rejected(pairs.size());
  double mid = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    chosen[i] = dot(p.weight, init.featurizer(pairs[i].context, pairs[i].chosen));
    rejected[i] = dot(p.weight, init.featurizer(pairs[i].context, pairs[i].rejected));
    mid += chosen[i] + rejected[i];
  }
  p.bias = -mid / (2.0 * static_cast<double>(pairs.size()));
  std::array<double, kNumStepKinds> kind_sum{};
  std::array<int, kNumStepKinds> kind_count{};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].chosen.kind != pairs[i].rejected.kind) continue;
    const auto k = static_cast<std::size_t>(pairs[i].chosen.kind);
    kind_sum[k] += chosen[i] + rejected[i] + 2.0 * p.bias;
    kind_count[k] += 2;
  }
  for (int k = 0; k < kNumStepKinds; ++k) {
    if (kind_count[k] > 0) {
      p.weight[init.featurizer.kind_offset() + k] -= kind_sum[k] / kind_count[k];
    }
  }
  return p;
}

void write_checkpoint(std::ostream& out, const PrmParams& params) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "feature_dim " << params.weight.size() << '\n';
  out << "bias " << records::hex_double(params.bias) << '\n';
  out << "weight";
  for (double w : params.weight) out << ' ' << records::hex_double(w);
  out << '\n';
}

PrmParams read_checkpoint(std::istream& in) {
  std::string magic, key, word;
  int version = 0;
  long dim = 0;
  in >> magic >> version;
  if (magic != kMagic) throw FormatError("prm checkpoint: bad header");
  if (version != kVersion) throw FormatError("prm checkpoint: unsupported version");
  in >> key >> dim;
  if (key != "feature_dim" || dim <= 0) throw FormatError("prm checkpoint: feature_dim");
  PrmParams p = PrmParams::zeros(static_cast<int>(dim));
  in >> key >> word;
  if (key != "bias") throw FormatError("prm checkpoint: missing bias");
  p.bias = records::parse_double(word);
  in >> key;
  if (key != "weight") throw FormatError("prm checkpoint: missing weight row");
  for (auto& w : p.weight) {
    if (!(in >> word)) throw FormatError("prm checkpoint: truncated weight row");
    w = records::parse_double(word);
  }
  if (!p.all_finite()) throw FormatError("prm checkpoint: non-finite entry");
  return p;
}

void save_checkpoint(const std::string& path, const PrmParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(out, params);
  if (!out) throw IoError("write failed: " + path);
}

PrmParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace hoplab::prm
