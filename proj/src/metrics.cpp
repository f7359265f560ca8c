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

#include "hoplab/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hoplab/error.hpp"
#include "hoplab/parallel.hpp"

namespace hoplab {

void MetricsLog::add(int iteration, std::map<std::string, double> values) {
  if (!records_.empty() && iteration < records_.back().iteration) {
    throw InvalidArgument("metrics: iteration " + std::to_string(iteration) +
                          " precedes the last recorded iteration " +
                          std::to_string(records_.back().iteration));
  }
  records_.push_back({iteration, std::move(values)});
}

std::vector<std::pair<int, double>> MetricsLog::series(const std::string& name) const {
  std::vector<std::pair<int, double>> out;
  for (const auto& r : records_) {
    auto it = r.values.find(name);
    if (it != r.values.end()) out.emplace_back(r.iteration, it->second);
  }
  return out;
}

std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

std::string MetricsLog::to_csv(const std::vector<std::string>& columns) const {
  std::ostringstream out;
  out << "iteration";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& r : records_) {
    out << r.iteration;
    for (const auto& c : columns) {
      out << ',';
      auto it = r.values.find(c);
      if (it != r.values.end()) out << csv_number(it->second);
    }
    out << '\n';
  }
  return out.str();
}

void MetricsLog::write_csv(const std::string& path, const std::vector<std::string>& columns) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << to_csv(columns);
  if (!out) throw IoError("write failed: " + path);
}

bool exact_match(const std::optional<std::vector<Token>>& answer, const std::vector<Token>& gold) {
  return answer.has_value() && *answer == gold;
}

double answer_f1(const Trajectory& traj, const std::vector<Token>& gold) {
  const auto a = traj.answer();
  return a ? env::token_f1(*a, gold) : 0.0;
}

EvalResult evaluate(const policy::Policy& policy, const env::World& world,
                    const std::vector<env::QueryInstance>& queries, const EvalOptions& options) {
  struct Row {
    bool em = false;
    double f1 = 0.0;
    bool valid = false;
    int retrievals = 0;
  };
  std::vector<Row> rows(queries.size());
  parallel_for(queries.size(), options.num_threads, [&](std::size_t i) {
    Rng rng(0);  // unused by greedy decoding
    policy::RolloutOptions opt{options.max_steps, options.k_docs, 0.0};
    const Trajectory t = policy::rollout(policy, world, queries[i], opt, rng);
    rows[i].em = exact_match(t.answer(), queries[i].gold_answer);
    rows[i].f1 = answer_f1(t, queries[i].gold_answer);
    rows[i].valid = is_traj_valid(t, world.vocab());
    rows[i].retrievals = t.retrieval_count();
  });

  EvalResult r;
  r.count = static_cast<int>(queries.size());
  r.coverage.assign(3, 0.0);
  r.cumulative_f1.assign(3, 0.0);
  if (queries.empty()) return r;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    r.em += rows[i].em;
    r.f1 += rows[i].f1;
    r.format_rate += rows[i].valid;
    auto& h = r.per_hop[queries[i].hop_count];
    ++h.count;
    h.em += rows[i].em;
    h.f1 += rows[i].f1;
    for (int b = 0; b < 3; ++b) {
      if (b == 2 || rows[i].retrievals <= b + 1) {
        r.coverage[b] += 1.0;
        r.cumulative_f1[b] += rows[i].f1;
      }
    }
  }
  const double n = static_cast<double>(queries.size());
  r.em /= n;
  r.f1 /= n;
  r.format_rate /= n;
  for (int b = 0; b < 3; ++b) {
    r.coverage[b] /= n;
    r.cumulative_f1[b] /= n;
  }
  for (auto& [hop, h] : r.per_hop) {
    h.em /= h.count;
    h.f1 /= h.count;
  }
  return r;
}

}  // namespace hoplab
