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

#include "hoplab/vocab.hpp"

#include <array>
#include <charconv>

#include "hoplab/error.hpp"

namespace hoplab {
namespace {

constexpr std::array<std::string_view, kNumMarkers + 1> kMarkerNames = {
    "<step>",      "</step>",      "<subquery>",  "</subquery>",
    "<retrieval>", "</retrieval>", "<subanswer>", "</subanswer>",
    "<answer>",    "</answer>",    "<eos>",
};

int parse_index(std::string_view digits) {
  int value = -1;
  auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return -1;
  return value;
}

}  // namespace

Vocab::Vocab(int num_relations, int num_entities)
    : num_relations_(num_relations), num_entities_(num_entities) {
  if (num_relations < 0 || num_entities < 0) {
    throw InvalidArgument("vocab: negative relation or entity count");
  }
}

std::string Vocab::name(Token t) const {
  if (t >= 0 && t <= kEos) return std::string(kMarkerNames[t]);
  if (is_relation(t)) return "r" + std::to_string(relation_of(t));
  if (is_entity(t)) return "e" + std::to_string(entity_of(t));
  throw InvalidArgument("vocab: token id out of range: " + std::to_string(t));
}

Token Vocab::parse(std::string_view name) const {
  for (Token t = 0; t <= kEos; ++t) {
    if (kMarkerNames[t] == name) return t;
  }
  if (name.size() >= 2) {
    const int idx = parse_index(name.substr(1));
    if (name[0] == 'r' && idx >= 0 && idx < num_relations_) return relation_token(idx);
    if (name[0] == 'e' && idx >= 0 && idx < num_entities_) return entity_token(idx);
  }
  throw FormatError("vocab: unknown token '" + std::string(name) + "'");
}

std::vector<std::string> Vocab::names(const std::vector<Token>& tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (Token t : tokens) out.push_back(name(t));
  return out;
}

std::vector<Token> Vocab::parse_all(const std::vector<std::string>& names) const {
  std::vector<Token> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(parse(n));
  return out;
}

}  // namespace hoplab
