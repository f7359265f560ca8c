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

#ifndef HOPLAB_RECORDS_HPP_
#define HOPLAB_RECORDS_HPP_

#include <string>
#include <vector>

#include "hoplab/trajectory.hpp"
#include "hoplab/vocab.hpp"
#include "json.hpp"

// Line-delimited record helpers shared by every dataset and dump the lab
// writes. Tokens are stored by name; provenance as a string of 'p'/'e'.
namespace hoplab::records {

nlohmann::json step_to_json(const Step& step, const Vocab& vocab);
Step step_from_json(const nlohmann::json& j, const Vocab& vocab);

// Closed steps only; contexts are always taken at step boundaries.
nlohmann::json state_to_json(const State& state, const Vocab& vocab);
State state_from_json(const nlohmann::json& j, const Vocab& vocab);

nlohmann::json trajectory_to_json(const Trajectory& traj, const Vocab& vocab);

void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::string& path);

// Shortest decimal string that parses back to the same double.
std::string format_double(double x);

// Exact text round-trip for checkpoints: C99 hexadecimal floating point.
std::string hex_double(double x);
double parse_double(const std::string& text);

}  // namespace hoplab::records

#endif  // HOPLAB_RECORDS_HPP_
