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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "hoplab/error.hpp"
#include "hoplab/harness.hpp"
#include "test_support.hpp"

using namespace hoplab;
namespace fs = std::filesystem;
using hoplab::testing::read_file;
using hoplab::testing::scratch_dir;

namespace {

harness::ExperimentConfig small_config(const std::string& dir) {
  harness::ExperimentConfig c;
  c.out_dir = dir;
  c.world = env::WorldConfig{.num_entities = 40, .num_relations = 6, .fact_density = 0.3};
  c.data.train_queries = 40;
  c.data.rft_queries = 40;
  c.data.rl_queries = 24;
  c.data.eval_queries = 20;
  c.sft.epochs = 4;
  c.search.queries = 6;
  c.search.mcts.n_simulations = 40;
  c.rft.num_candidates = 4;
  c.rl.rl.iterations = 4;
  c.rl.rl.queries_per_iteration = 4;
  c.rl.rl.eval_every = 2;
  c.ablation.seeds = 2;
  return c;
}

int csv_rows(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int n = -1;  // header
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

}  // namespace

TEST_CASE("the pipeline writes every checkpoint and metrics file and reruns identically") {
  const std::string dir = scratch_dir("pipeline");
  harness::Experiment e(small_config(dir));
  const std::string summary = e.run_pipeline();
  for (const char* f :
       {"world.jsonl", "queries_train.jsonl", "queries_eval.jsonl", "sft_dataset.jsonl",
        "sft_loss.csv", "policy_sft.ckpt", "trees.jsonl", "pairs.jsonl", "prm_metrics.csv",
        "prm.ckpt", "rft_pairs.jsonl", "rft_loss.csv", "policy_rft.ckpt", "rl_groups.jsonl",
        "rl_metrics.csv", "policy_rl.ckpt", "eval.csv", "eval_per_hop.csv", "summary.txt"}) {
    CHECK_MESSAGE(fs::exists(e.path(f)), f);
  }
  CHECK(fs::exists(e.path("checkpoints/sft_epoch_001.ckpt")));
  CHECK(csv_rows(e.path("sft_loss.csv")) == 5);
  CHECK(csv_rows(e.path("eval.csv")) == 3);
  CHECK(read_file(e.path("summary.txt")) == summary);

  const std::string again = scratch_dir("pipeline_again");
  harness::Experiment e2(small_config(again));
  CHECK(e2.run_pipeline() == summary);
  for (const char* f : {"sft_loss.csv", "prm_metrics.csv", "rft_loss.csv", "rl_metrics.csv",
                        "eval.csv", "eval_per_hop.csv"}) {
    CHECK_MESSAGE(read_file(e.path(f)) == read_file(e2.path(f)), f);
  }

  // A later stage resumes from the files of earlier ones.
  harness::Experiment resumed(small_config(dir));
  resumed.run_stage(harness::Stage::kRl);
  CHECK(read_file(resumed.path("rl_metrics.csv")) == read_file(e2.path("rl_metrics.csv")));
}

TEST_CASE("a stage without its inputs fails with a tagged dependency error") {
  const std::string dir = scratch_dir("dependency");
  harness::ExperimentConfig c = small_config(dir);
  harness::Experiment e(c);
  e.run_stage(harness::Stage::kWorld);
  e.run_stage(harness::Stage::kSft);
  c.rl.init = "sft";
  harness::Experiment rl_only(c);
  try {
    rl_only.run_stage(harness::Stage::kRl);
    FAIL("expected a dependency error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::kDependency);
    CHECK(std::string(err.what()).rfind("[rl]", 0) == 0);
    CHECK(std::string(err.what()).find("prm") != std::string::npos);
  }
  harness::Experiment empty(small_config(scratch_dir("dependency_empty")));
  try {
    empty.run_stage(harness::Stage::kEval);
    FAIL("expected a dependency error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::kDependency);
    CHECK(std::string(err.what()).rfind("[eval]", 0) == 0);
  }
}

TEST_CASE("oracle and uniform policies bracket the metrics") {
  const harness::ExperimentConfig c = small_config(scratch_dir("bracket"));
  const harness::Data d = harness::make_data(c);
  const policy::Featurizer f(d.world.vocab());
  const auto oracle = evaluate(policy::Policy(f, policy::oracle_params(f)), d.world, d.eval, {});
  CHECK(oracle.em == 1.0);
  CHECK(oracle.f1 == 1.0);
  CHECK(oracle.format_rate == 1.0);
  const auto uniform = evaluate(policy::Policy(d.world.vocab(), /*masking=*/false), d.world,
                                d.eval, {});
  CHECK(uniform.em < 0.05);
  CHECK(uniform.format_rate < 0.05);
  for (const auto* r : {&oracle, &uniform}) {
    REQUIRE(r->coverage.size() == 3);
    CHECK(r->coverage[0] <= r->coverage[1]);
    CHECK(r->coverage[1] <= r->coverage[2]);
    CHECK(r->cumulative_f1[0] <= r->cumulative_f1[1]);
    CHECK(r->cumulative_f1[1] <= r->cumulative_f1[2]);
    CHECK(std::abs(r->cumulative_f1[2] - r->f1) < 1e-12);
  }
}

TEST_CASE("ablations produce every variant and beta run with the expected tables") {
  const std::string dir = scratch_dir("ablation");
  const auto rep = harness::run_ablations(small_config(dir));
  REQUIRE(rep.seeds.size() == 2);
  REQUIRE(rep.variants.size() == 5);
  for (const auto& v : rep.variants) CHECK(v.f1.size() == 2);
  REQUIRE(rep.beta_sweep.size() == 3);
  for (const auto& v : rep.beta_sweep) CHECK(v.f1.size() == 2);
  CHECK(rep.curve_beta.size() == 2);
  CHECK(rep.curve_grpo.size() == 2);
  // The full variant is the beta = 0.3 run of the sweep.
  CHECK(rep.variant("Full").f1 == rep.beta_sweep[1].f1);
  const fs::path a = fs::path(dir) / "ablation";
  CHECK(csv_rows((a / "ablation.csv").string()) == 5);
  CHECK(csv_rows((a / "beta_sweep.csv").string()) == 3);
  CHECK(csv_rows((a / "ablation_per_seed.csv").string()) == 2 * (5 + 3));
  CHECK(fs::exists(a / "learning_curves.csv"));
  CHECK(fs::exists(a / "ablation.txt"));
}

TEST_CASE("retrieval depth sweep") {
  const std::string dir = scratch_dir("sweep");
  harness::ExperimentConfig c = small_config(dir);
  harness::Experiment e(c);
  e.run_stage(harness::Stage::kWorld);
  e.run_stage(harness::Stage::kSft);
  const auto rows = harness::sweep_retrieval(e);
  const int max_hops = c.world.max_hops;
  CHECK(static_cast<int>(rows.size()) == 3 * max_hops);
  for (int h = 1; h <= max_hops; ++h) {
    int n = 0;
    for (const auto& r : rows) n += r.hops == h ? 1 : 0;
    CHECK(n == 3);
  }
  double f1_k1 = -1.0, f1_k5 = -1.0;
  for (const auto& r : rows) {
    if (r.hops == 1 && r.k == 1) f1_k1 = r.f1;
    if (r.hops == 1 && r.k == 5) f1_k5 = r.f1;
  }
  CHECK(f1_k5 >= f1_k1 - 0.02);
  const std::string first = read_file(e.path("sweep_k.csv"));
  (void)harness::sweep_retrieval(e);
  CHECK(read_file(e.path("sweep_k.csv")) == first);
}

TEST_CASE("configuration round-trips and rejects unknown keys") {
  harness::ExperimentConfig c = small_config("somewhere");
  c.seed = 99;
  c.rl.rl.beta = 0.45;
  c.rl.rl.step_stats = rl::StepStats::kPerStepIndex;
  c.ablation.beta_grid = {0.0, 0.2};
  const auto j = harness::config_to_json(c);
  CHECK(harness::config_to_json(harness::config_from_json(j)) == j);
  auto bad = j;
  bad["rl"]["betta"] = 0.3;
  CHECK_THROWS_AS((void)harness::config_from_json(bad), Error);
  auto top = j;
  top["extra"] = 1;
  CHECK_THROWS_AS((void)harness::config_from_json(top), Error);
  auto invalid = j;
  invalid["rl"]["group_size"] = 1;
  CHECK_THROWS_AS((void)harness::config_from_json(invalid), Error);
}

TEST_CASE("policy checkpoints round-trip through files") {
  const env::World w = hoplab::testing::small_world();
  const policy::Featurizer f(w.vocab());
  Rng rng(3);
  const auto params = hoplab::testing::random_params(f, 1.0, rng);
  const std::string path = (fs::path(scratch_dir("ckpt")) / "p.ckpt").string();
  policy::save_checkpoint(path, params);
  CHECK(policy::load_checkpoint(path) == params);
  CHECK_THROWS_AS((void)policy::load_checkpoint(path + ".missing"), Error);
}
