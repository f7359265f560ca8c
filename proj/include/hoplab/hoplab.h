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

#ifndef HOPLAB_HOPLAB_H_
#define HOPLAB_HOPLAB_H_

/*
 * C interface to the hoplab library. Every function returns an hl_status;
 * on failure a human-readable message is available from hl_last_error() on
 * the calling thread until the next call on that thread.
 *
 * Handles are opaque and owned by the caller, who releases them with the
 * matching *_destroy function. Destroy functions accept NULL.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(HOPLAB_BUILDING_LIBRARY)
#    define HL_API __declspec(dllexport)
#  else
#    define HL_API __declspec(dllimport)
#  endif
#else
#  define HL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hl_status {
  HL_OK = 0,
  HL_ERR_INVALID_ARGUMENT = 1,
  HL_ERR_INFEASIBLE = 2,
  HL_ERR_IO = 3,
  HL_ERR_FORMAT = 4,
  HL_ERR_DEPENDENCY = 5,
  HL_ERR_DIVERGENCE = 6,
  HL_ERR_INTERNAL = 7
} hl_status;

typedef struct hl_experiment hl_experiment;
typedef struct hl_world hl_world;

HL_API const char* hl_version(void);
HL_API const char* hl_status_name(hl_status status);
HL_API const char* hl_last_error(void);

/* Experiments. Configuration is JSON; unknown keys are rejected. */
HL_API hl_status hl_experiment_create_from_file(const char* config_path, hl_experiment** out);
HL_API hl_status hl_experiment_create_from_json(const char* config_json, hl_experiment** out);
HL_API void hl_experiment_destroy(hl_experiment* experiment);
HL_API hl_status hl_experiment_set_seed(hl_experiment* experiment, uint64_t seed);
HL_API hl_status hl_experiment_set_out_dir(hl_experiment* experiment, const char* out_dir);

/* Stage names: world, sft, search, prm, rft, rl, eval. */
HL_API hl_status hl_experiment_run_stage(hl_experiment* experiment, const char* stage);
HL_API hl_status hl_experiment_run_pipeline(hl_experiment* experiment);
HL_API hl_status hl_experiment_run_ablations(hl_experiment* experiment);
HL_API hl_status hl_experiment_sweep_retrieval(hl_experiment* experiment);

/* Greedy evaluation of a stored checkpoint ("sft", "rft" or "rl") on the
 * evaluation split. */
HL_API hl_status hl_experiment_evaluate(hl_experiment* experiment, const char* policy,
                                        double* em, double* f1);

/* Copies the last pipeline summary (NUL-terminated) into buf. *needed
 * receives the required size including the terminator; buf may be NULL to
 * query it. Truncation yields HL_ERR_INVALID_ARGUMENT. */
HL_API hl_status hl_experiment_summary(const hl_experiment* experiment, char* buf, size_t size,
                                       size_t* needed);

/* Copies the output directory, with the same buffer contract as
 * hl_experiment_summary. */
HL_API hl_status hl_experiment_out_dir(const hl_experiment* experiment, char* buf, size_t size,
                                       size_t* needed);

/* Worlds. config_json may be NULL for defaults. */
HL_API hl_status hl_world_generate(const char* config_json, uint64_t seed, hl_world** out);
HL_API hl_status hl_world_load(const char* path, hl_world** out);
HL_API hl_status hl_world_save(const hl_world* world, const char* path);
HL_API void hl_world_destroy(hl_world* world);
HL_API hl_status hl_world_num_facts(const hl_world* world, size_t* out);

/* Token-level F1 between two space-separated answer strings. */
HL_API hl_status hl_token_f1(const char* prediction, const char* gold, double* out);

#ifdef __cplusplus
}
#endif

#endif /* HOPLAB_HOPLAB_H_ */
