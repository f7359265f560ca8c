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

#include "hoplab/records.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "hoplab/error.hpp"

namespace hoplab::records {

using nlohmann::json;

json step_to_json(const Step& step, const Vocab& vocab) {
  std::string prov;
  prov.reserve(step.provenance.size());
  for (auto p : step.provenance) prov.push_back(p == Provenance::kPolicy ? 'p' : 'e');
  return json{{"kind", std::string(step_kind_name(step.kind))},
              {"tokens", vocab.names(step.tokens)},
              {"provenance", prov}};
}

Step step_from_json(const json& j, const Vocab& vocab) {
  Step step;
  step.kind = parse_step_kind(j.at("kind").get<std::string>());
  step.tokens = vocab.parse_all(j.at("tokens").get<std::vector<std::string>>());
  const std::string prov = j.at("provenance");
  if (prov.size() != step.tokens.size()) {
    throw FormatError("step record: provenance length mismatch");
  }
  for (char c : prov) {
    if (c != 'p' && c != 'e') throw FormatError("step record: bad provenance flag");
    step.provenance.push_back(c == 'p' ? Provenance::kPolicy : Provenance::kEnvironment);
  }
  return step;
}

json state_to_json(const State& state, const Vocab& vocab) {
  json steps = json::array();
  for (const auto& s : state.steps()) steps.push_back(step_to_json(s, vocab));
  return json{{"query_id", state.query_id()},
              {"query", vocab.names(state.query_tokens())},
              {"steps", steps}};
}

State state_from_json(const json& j, const Vocab& vocab) {
  std::vector<Step> steps;
  for (const auto& s : j.at("steps")) steps.push_back(step_from_json(s, vocab));
  return State::from_steps(j.at("query_id").get<int>(),
                           vocab.parse_all(j.at("query").get<std::vector<std::string>>()),
                           steps);
}

json trajectory_to_json(const Trajectory& traj, const Vocab& vocab) {
  json steps = json::array();
  for (const auto& s : traj.steps) steps.push_back(step_to_json(s, vocab));
  return json{{"query_id", traj.query_id},
              {"query", vocab.names(traj.query_tokens)},
              {"terminal", traj.terminal},
              {"steps", steps}};
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

double parse_double(const std::string& text) {
  char* end = nullptr;
  const double x = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') {
    throw FormatError("not a number: '" + text + "'");
  }
  return x;
}

}  // namespace hoplab::records
