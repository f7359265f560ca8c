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

#ifndef HOPLAB_HARNESS_HPP_
#define HOPLAB_HARNESS_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hoplab/mcts.hpp"
#include "hoplab/metrics.hpp"
#include "hoplab/policy.hpp"
#include "hoplab/prm.hpp"
#include "hoplab/rft.hpp"
#include "hoplab/rl.hpp"
#include "hoplab/sft.hpp"
#include "hoplab/synth_env.hpp"
#include "json.hpp"

namespace hoplab::harness {

// Four disjoint query pools. Supervised training and tree search use the
// train pool; refinement samples from train plus rft; RL trains on rl.
struct DataConfig {
  int train_queries = 120;
  int rft_queries = 360;
  int rl_queries = 240;
  int eval_queries = 100;
  std::vector<int> train_hops{1, 2, 3};
  std::vector<int> rft_hops{1, 2, 3};
  std::vector<int> rl_hops{3};
  std::vector<int> eval_hops{3};
};

struct SearchConfig {
  mcts::MctsConfig mcts;
  int queries = 60;                 // training queries searched
  std::vector<int> hops{3};         // restrict searched queries to these hop counts
};

struct PrmStageConfig {
  prm::PrmConfig train;
  double holdout_fraction = 0.2;
};

struct RlStageConfig {
  rl::RlConfig rl;
  std::string init = "rft";  // "rft" or "sft"
};

struct AblationConfig {
  int seeds = 5;
  std::vector<double> beta_grid{0.0, 0.3, 0.9};
};

struct Stages {
  bool world = true;
  bool sft = true;
  bool search = true;
  bool prm = true;
  bool rft = true;
  bool rl = true;
  bool eval = true;
};

struct Outputs {
  bool epoch_checkpoints = true;
  bool group_dumps = true;
  bool trees = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "hoplab_out";
  int num_threads = 1;
  bool masking = true;
  env::WorldConfig world{.num_entities = 80, .num_relations = 8, .fact_density = 0.3};
  DataConfig data;
  sft::SftConfig sft;
  SearchConfig search;
  PrmStageConfig prm;
  rft::RftConfig rft;
  RlStageConfig rl;
  EvalOptions eval;
  AblationConfig ablation;
  std::vector<int> k_grid{1, 3, 5};
  Stages stages;
  Outputs outputs;

  void validate() const;
};

// Parses a JSON object; unknown keys are rejected. Absent keys keep defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& c);

enum class Stage { kWorld, kSft, kSearch, kPrm, kRft, kRl, kEval };
std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

// Deterministic data for one configuration.
struct Data {
  env::World world;
  std::vector<env::QueryInstance> train;
  std::vector<env::QueryInstance> rft;
  std::vector<env::QueryInstance> rl;
  std::vector<env::QueryInstance> eval;

  // train followed by rft.
  std::vector<env::QueryInstance> rft_pool() const;
};
Data make_data(const ExperimentConfig& c);

struct PrmReport {
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

// In-memory stages. File-writing wrappers live in the Experiment class.
policy::PolicyParams run_sft(const ExperimentConfig& c, const Data& d,
                             const sft::EpochCallback& on_epoch = {});
std::vector<mcts::PreferencePair> run_search(const ExperimentConfig& c, const Data& d,
                                             const policy::Policy& sft_policy,
                                             std::vector<mcts::SearchTree>* trees = nullptr);
prm::PrmParams run_prm(const ExperimentConfig& c, const Vocab& vocab,
                       const std::vector<mcts::PreferencePair>& pairs, PrmReport* report,
                       const prm::PrmEpochCallback& on_epoch = {});
rl::RlResult run_rl(const ExperimentConfig& c, const Data& d, const policy::Policy& init,
                    const prm::PrmModel& prm, double beta, const rl::RlHooks& hooks = {});

// Runs stages against an output directory, persisting checkpoints so any
// stage can resume from the files of earlier ones.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  void set_seed(std::uint64_t seed) { config_.seed = seed; data_.reset(); }
  void set_out_dir(const std::string& dir) { config_.out_dir = dir; }

  void run_stage(Stage stage);
  // Enabled stages in order, then evaluation and summary.txt.
  std::string run_pipeline();
  // Evaluates every policy checkpoint present; writes eval.csv.
  std::map<std::string, EvalResult> evaluate_checkpoints();
  // One line per stage run so far on this object.
  std::string summary() const;
  std::string path(const std::string& name) const;

 private:
  const Data& data();
  policy::Policy load_policy(const std::string& name, Stage needed_by) const;
  prm::PrmModel load_prm(Stage needed_by) const;

  void stage_world();
  void stage_sft();
  void stage_search();
  void stage_prm();
  void stage_rft();
  void stage_rl();
  void stage_eval();

  ExperimentConfig config_;
  std::optional<Data> data_;
  std::vector<std::string> summary_lines_;
};

struct VariantScore {
  std::string variant;
  std::vector<double> f1;  // one per seed
  std::vector<double> em;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantScore> variants;  // Full, w/o Refinement, w/o RL, SFT Policy, GRPO Baseline
  std::vector<VariantScore> beta_sweep;  // one entry per beta, named "beta=<b>"
  std::vector<double> betas;
  // Outcome-reward learning curves of the two RL runs started from the SFT
  // policy (beta from the config and beta = 0), per seed.
  std::vector<std::vector<double>> curve_beta;
  std::vector<std::vector<double>> curve_grpo;

  const VariantScore& variant(const std::string& name) const;
};

double mean(const std::vector<double>& v);
double stddev(const std::vector<double>& v);  // sample deviation, 0 for n < 2
// First iteration whose value reaches the threshold; curve size if never.
int first_reaching(const std::vector<double>& curve, double threshold);

// Seeds derived from the master seed; every artifact is written under
// <out_dir>/ablation.
AblationReport run_ablations(const ExperimentConfig& config);

struct SweepRow {
  int k = 0;
  int hops = 0;
  int count = 0;
  double em = 0.0;
  double f1 = 0.0;
};
std::vector<SweepRow> sweep_retrieval(const policy::Policy& policy, const env::World& world,
                                      const std::vector<env::QueryInstance>& queries,
                                      const std::vector<int>& k_grid, const EvalOptions& options);
// Loads the most refined available policy and writes sweep_k.csv.
std::vector<SweepRow> sweep_retrieval(Experiment& experiment);

}  // namespace hoplab::harness

#endif  // HOPLAB_HARNESS_HPP_
