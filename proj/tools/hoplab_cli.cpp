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

#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hoplab/hoplab.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

class ExperimentHandle {
 public:
  ~ExperimentHandle() { hl_experiment_destroy(ptr_); }
  hl_experiment** out() { return &ptr_; }
  hl_experiment* get() const { return ptr_; }

 private:
  hl_experiment* ptr_ = nullptr;
};

struct Failure {
  hl_status status;
  std::string message;
};

void check(hl_status s) {
  if (s != HL_OK) throw Failure{s, hl_last_error()};
}

std::string fetch(const hl_experiment* e,
                  hl_status (*fn)(const hl_experiment*, char*, size_t, size_t*)) {
  size_t needed = 0;
  check(fn(e, nullptr, 0, &needed));
  std::string buf(needed, '\0');
  check(fn(e, buf.data(), buf.size(), &needed));
  buf.resize(needed - 1);
  return buf;
}

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (in) std::cout << in.rdbuf();
}

int run(const std::string& tag, const Options& opt,
        const std::function<void(hl_experiment*, const std::string& out_dir)>& body) {
  try {
    ExperimentHandle exp;
    if (opt.config.empty()) {
      check(hl_experiment_create_from_json("{}", exp.out()));
    } else {
      check(hl_experiment_create_from_file(opt.config.c_str(), exp.out()));
    }
    if (opt.seed) check(hl_experiment_set_seed(exp.get(), *opt.seed));
    if (!opt.out.empty()) check(hl_experiment_set_out_dir(exp.get(), opt.out.c_str()));
    body(exp.get(), fetch(exp.get(), hl_experiment_out_dir));
    return 0;
  } catch (const Failure& f) {
    std::string msg = f.message;
    if (msg.empty() || msg.front() != '[') msg = "[" + tag + "] " + msg;
    std::cerr << "hoplab: " << hl_status_name(f.status) << " error " << msg << '\n';
    return static_cast<int>(f.status);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-hop retrieval agent training lab"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(hl_version()));

  Options opt;
  std::uint64_t seed = 0;
  app.add_option("--config", opt.config, "JSON experiment configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the configuration)");
  app.add_option("--out", opt.out, "Output directory (overrides the configuration)");

  int code = 0;
  auto stage_cmd = [&](const char* name, const char* stage, const char* help) {
    app.add_subcommand(name, help)->callback([&, name, stage] {
      if (*seed_opt) opt.seed = seed;
      code = run(name, opt, [&](hl_experiment* e, const std::string&) {
        check(hl_experiment_run_stage(e, stage));
        std::cout << fetch(e, hl_experiment_summary);
      });
    });
  };
  stage_cmd("gen-world", "world", "Generate the world and query splits");
  stage_cmd("sft", "sft", "Supervised fine-tuning on oracle trajectories");
  stage_cmd("search", "search", "Tree search from the SFT policy; emits preference pairs");
  stage_cmd("train-prm", "prm", "Train the process reward model on sibling pairs");
  stage_cmd("rft", "rft", "Rejection-sampling refinement with the dual filter");
  stage_cmd("train-rl", "rl", "Group-relative RL with outcome and process advantages");

  app.add_subcommand("eval", "Evaluate every stored policy checkpoint")->callback([&] {
    if (*seed_opt) opt.seed = seed;
    code = run("eval", opt, [&](hl_experiment* e, const std::string& out) {
      check(hl_experiment_run_stage(e, "eval"));
      print_file(out + "/eval.csv");
    });
  });
  app.add_subcommand("ablate", "Run the ablation table and the beta sweep over seeds")
      ->callback([&] {
        if (*seed_opt) opt.seed = seed;
        code = run("ablate", opt, [&](hl_experiment* e, const std::string& out) {
          check(hl_experiment_run_ablations(e));
          print_file(out + "/ablation/ablation.txt");
        });
      });
  app.add_subcommand("sweep-k", "Sweep the retrieval depth k per hop count")->callback([&] {
    if (*seed_opt) opt.seed = seed;
    code = run("sweep-k", opt, [&](hl_experiment* e, const std::string& out) {
      check(hl_experiment_sweep_retrieval(e));
      print_file(out + "/sweep_k.csv");
    });
  });
  app.add_subcommand("run", "Run every enabled stage in order")->callback([&] {
    if (*seed_opt) opt.seed = seed;
    code = run("run", opt, [&](hl_experiment* e, const std::string&) {
      check(hl_experiment_run_pipeline(e));
      std::cout << fetch(e, hl_experiment_summary);
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return code;
}
