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

#ifndef HOPLAB_METRICS_HPP_
#define HOPLAB_METRICS_HPP_

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hoplab/policy.hpp"
#include "hoplab/synth_env.hpp"

namespace hoplab {

// Time-ordered named scalars keyed by a non-decreasing iteration index.
class MetricsLog {
 public:
  struct Record {
    int iteration = 0;
    std::map<std::string, double> values;
  };

  void add(int iteration, std::map<std::string, double> values);
  const std::vector<Record>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  // Values of one metric in record order; records lacking it are skipped.
  std::vector<std::pair<int, double>> series(const std::string& name) const;

  // Header "iteration,<columns...>"; absent values are left empty.
  void write_csv(const std::string& path, const std::vector<std::string>& columns) const;
  std::string to_csv(const std::vector<std::string>& columns) const;

 private:
  std::vector<Record> records_;
};

// Fixed-width decimal used in every CSV table.
std::string csv_number(double x);

struct EvalOptions {
  int k_docs = 3;
  int max_steps = 12;
  int num_threads = 1;
};

struct HopBreakdown {
  int count = 0;
  double em = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  int count = 0;
  double em = 0.0;
  double f1 = 0.0;
  double format_rate = 0.0;  // share of trajectories passing the workflow check
  std::map<int, HopBreakdown> per_hop;
  // Index r = 0, 1, 2 for "<= 1", "<= 2" and all retrieval steps. Coverage is
  // the share of queries finished within the budget; cumulative F1 sums the
  // F1 of those queries divided by the total count, so the last entry equals
  // the overall F1.
  std::vector<double> coverage;
  std::vector<double> cumulative_f1;
};

bool exact_match(const std::optional<std::vector<Token>>& answer, const std::vector<Token>& gold);
double answer_f1(const Trajectory& traj, const std::vector<Token>& gold);

// Greedy (temperature 0) rollouts on every query.
EvalResult evaluate(const policy::Policy& policy, const env::World& world,
                    const std::vector<env::QueryInstance>& queries, const EvalOptions& options);

}  // namespace hoplab

#endif  // HOPLAB_METRICS_HPP_
