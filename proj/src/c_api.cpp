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

#include "hoplab/hoplab.h"

#include <cstring>
#include <exception>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "hoplab/error.hpp"
#include "hoplab/harness.hpp"
#include "hoplab/synth_env.hpp"

struct hl_experiment {
  std::unique_ptr<hoplab::harness::Experiment> impl;
};

struct hl_world {
  hoplab::env::World impl;
};

namespace {

thread_local std::string g_last_error;

hl_status status_of(hoplab::ErrorKind kind) {
  using hoplab::ErrorKind;
  switch (kind) {
    case ErrorKind::kInvalidArgument: return HL_ERR_INVALID_ARGUMENT;
    case ErrorKind::kInfeasible: return HL_ERR_INFEASIBLE;
    case ErrorKind::kIo: return HL_ERR_IO;
    case ErrorKind::kFormat: return HL_ERR_FORMAT;
    case ErrorKind::kDependency: return HL_ERR_DEPENDENCY;
    case ErrorKind::kDivergence: return HL_ERR_DIVERGENCE;
    case ErrorKind::kInternal: return HL_ERR_INTERNAL;
  }
  return HL_ERR_INTERNAL;
}

hl_status fail(hl_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

template <typename Fn>
hl_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return HL_OK;
  } catch (const hoplab::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(HL_ERR_FORMAT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(HL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(HL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(HL_ERR_INTERNAL, "unknown exception");
  }
}

#define HL_REQUIRE(cond, what)                                   \
  do {                                                           \
    if (!(cond)) return fail(HL_ERR_INVALID_ARGUMENT, (what));   \
  } while (0)

std::vector<std::string> split_ws(const char* s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

hl_status copy_out(const std::string& s, char* buf, size_t size, size_t* needed,
                   const char* fn) {
  if (needed) *needed = s.size() + 1;
  if (!buf) return HL_OK;
  if (size < s.size() + 1) {
    if (size > 0) buf[0] = '\0';
    return fail(HL_ERR_INVALID_ARGUMENT, std::string(fn) + ": buffer too small");
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return HL_OK;
}

}  // namespace

extern "C" {

const char* hl_version(void) { return "0.1.0"; }

const char* hl_status_name(hl_status status) {
  switch (status) {
    case HL_OK: return "ok";
    case HL_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case HL_ERR_INFEASIBLE: return "infeasible";
    case HL_ERR_IO: return "io";
    case HL_ERR_FORMAT: return "format";
    case HL_ERR_DEPENDENCY: return "dependency";
    case HL_ERR_DIVERGENCE: return "divergence";
    case HL_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* hl_last_error(void) { return g_last_error.c_str(); }

hl_status hl_experiment_create_from_file(const char* config_path, hl_experiment** out) {
  HL_REQUIRE(config_path && out, "hl_experiment_create_from_file: null argument");
  *out = nullptr;
  return guarded([&] {
    auto e = std::make_unique<hl_experiment>();
    e->impl = std::make_unique<hoplab::harness::Experiment>(hoplab::harness::load_config(config_path));
    *out = e.release();
  });
}

hl_status hl_experiment_create_from_json(const char* config_json, hl_experiment** out) {
  HL_REQUIRE(config_json && out, "hl_experiment_create_from_json: null argument");
  *out = nullptr;
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& ex) {
      throw hoplab::InvalidArgument(std::string("config: ") + ex.what());
    }
    auto e = std::make_unique<hl_experiment>();
    e->impl = std::make_unique<hoplab::harness::Experiment>(hoplab::harness::config_from_json(j));
    *out = e.release();
  });
}

void hl_experiment_destroy(hl_experiment* experiment) { delete experiment; }

hl_status hl_experiment_set_seed(hl_experiment* experiment, uint64_t seed) {
  HL_REQUIRE(experiment, "hl_experiment_set_seed: null experiment");
  return guarded([&] { experiment->impl->set_seed(seed); });
}

hl_status hl_experiment_set_out_dir(hl_experiment* experiment, const char* out_dir) {
  HL_REQUIRE(experiment && out_dir && *out_dir, "hl_experiment_set_out_dir: null or empty argument");
  return guarded([&] { experiment->impl->set_out_dir(out_dir); });
}

hl_status hl_experiment_run_stage(hl_experiment* experiment, const char* stage) {
  HL_REQUIRE(experiment && stage, "hl_experiment_run_stage: null argument");
  return guarded([&] { experiment->impl->run_stage(hoplab::harness::parse_stage(stage)); });
}

hl_status hl_experiment_run_pipeline(hl_experiment* experiment) {
  HL_REQUIRE(experiment, "hl_experiment_run_pipeline: null experiment");
  return guarded([&] { experiment->impl->run_pipeline(); });
}

hl_status hl_experiment_run_ablations(hl_experiment* experiment) {
  HL_REQUIRE(experiment, "hl_experiment_run_ablations: null experiment");
  return guarded([&] { hoplab::harness::run_ablations(experiment->impl->config()); });
}

hl_status hl_experiment_sweep_retrieval(hl_experiment* experiment) {
  HL_REQUIRE(experiment, "hl_experiment_sweep_retrieval: null experiment");
  return guarded([&] { hoplab::harness::sweep_retrieval(*experiment->impl); });
}

hl_status hl_experiment_evaluate(hl_experiment* experiment, const char* policy, double* em,
                                 double* f1) {
  HL_REQUIRE(experiment && policy && em && f1, "hl_experiment_evaluate: null argument");
  return guarded([&] {
    const auto results = experiment->impl->evaluate_checkpoints();
    auto it = results.find(policy);
    if (it == results.end()) {
      throw hoplab::Error(hoplab::ErrorKind::kDependency,
                          std::string("[eval] no checkpoint for policy '") + policy + "'");
    }
    *em = it->second.em;
    *f1 = it->second.f1;
  });
}

hl_status hl_experiment_summary(const hl_experiment* experiment, char* buf, size_t size,
                                size_t* needed) {
  HL_REQUIRE(experiment, "hl_experiment_summary: null experiment");
  return copy_out(experiment->impl->summary(), buf, size, needed, "hl_experiment_summary");
}

hl_status hl_experiment_out_dir(const hl_experiment* experiment, char* buf, size_t size,
                                size_t* needed) {
  HL_REQUIRE(experiment, "hl_experiment_out_dir: null experiment");
  return copy_out(experiment->impl->config().out_dir, buf, size, needed, "hl_experiment_out_dir");
}

hl_status hl_world_generate(const char* config_json, uint64_t seed, hl_world** out) {
  HL_REQUIRE(out, "hl_world_generate: null output");
  *out = nullptr;
  return guarded([&] {
    hoplab::env::WorldConfig wc;
    if (config_json) {
      nlohmann::json j = nlohmann::json::object();
      j["world"] = nlohmann::json::parse(config_json);
      wc = hoplab::harness::config_from_json(j).world;
    }
    *out = new hl_world{hoplab::env::gen_world(wc, seed)};
  });
}

hl_status hl_world_load(const char* path, hl_world** out) {
  HL_REQUIRE(path && out, "hl_world_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new hl_world{hoplab::env::load_world(path)}; });
}

hl_status hl_world_save(const hl_world* world, const char* path) {
  HL_REQUIRE(world && path, "hl_world_save: null argument");
  return guarded([&] { hoplab::env::save_world(path, world->impl); });
}

void hl_world_destroy(hl_world* world) { delete world; }

hl_status hl_world_num_facts(const hl_world* world, size_t* out) {
  HL_REQUIRE(world && out, "hl_world_num_facts: null argument");
  *out = world->impl.facts().size();
  return HL_OK;
}

hl_status hl_token_f1(const char* prediction, const char* gold, double* out) {
  HL_REQUIRE(prediction && gold && out, "hl_token_f1: null argument");
  return guarded([&] {
    std::map<std::string, hoplab::Token> ids;
    auto encode = [&](const char* s) {
      std::vector<hoplab::Token> t;
      for (const auto& w : split_ws(s)) {
        t.push_back(ids.emplace(w, static_cast<hoplab::Token>(ids.size())).first->second);
      }
      return t;
    };
    const auto p = encode(prediction);
    const auto g = encode(gold);
    *out = hoplab::env::token_f1(p, g);
  });
}

}  // extern "C"
