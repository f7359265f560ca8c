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

#ifndef HOPLAB_VOCAB_HPP_
#define HOPLAB_VOCAB_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hoplab {

using Token = std::int32_t;

// Control markers occupy the first ids of every vocabulary. Opening and
// closing markers of one block are adjacent (open = 2k, close = 2k + 1).
enum class Control : Token {
  kStepOpen = 0,
  kStepClose = 1,
  kSubqueryOpen = 2,
  kSubqueryClose = 3,
  kRetrievalOpen = 4,
  kRetrievalClose = 5,
  kSubanswerOpen = 6,
  kSubanswerClose = 7,
  kAnswerOpen = 8,
  kAnswerClose = 9,
};

inline constexpr Token kNumMarkers = 10;
inline constexpr Token kEos = 10;
inline constexpr Token kFirstContentToken = 11;

constexpr Token token(Control c) { return static_cast<Token>(c); }

// Token layout: [markers | EOS | relations | entities]. Ids are dense and a
// pure function of (num_relations, num_entities), hence stable for a World.
class Vocab {
 public:
  Vocab() = default;
  Vocab(int num_relations, int num_entities);

  int size() const { return kFirstContentToken + num_relations_ + num_entities_; }
  int num_relations() const { return num_relations_; }
  int num_entities() const { return num_entities_; }

  Token relation_token(int relation) const { return kFirstContentToken + relation; }
  Token entity_token(int entity) const {
    return kFirstContentToken + num_relations_ + entity;
  }

  // Membership in the control-token set: exactly the open/close markers.
  static bool is_control(Token t) { return t >= 0 && t < kNumMarkers; }
  static bool is_open(Token t) { return is_control(t) && t % 2 == 0; }
  static bool is_close(Token t) { return is_control(t) && t % 2 == 1; }
  bool is_relation(Token t) const {
    return t >= kFirstContentToken && t < kFirstContentToken + num_relations_;
  }
  bool is_entity(Token t) const {
    return t >= kFirstContentToken + num_relations_ && t < size();
  }
  int relation_of(Token t) const { return t - kFirstContentToken; }
  int entity_of(Token t) const { return t - kFirstContentToken - num_relations_; }

  std::string name(Token t) const;
  // Inverse of name(); throws FormatError on unknown names.
  Token parse(std::string_view name) const;

  std::vector<std::string> names(const std::vector<Token>& tokens) const;
  std::vector<Token> parse_all(const std::vector<std::string>& names) const;

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  int num_relations_ = 0;
  int num_entities_ = 0;
};

}  // namespace hoplab

#endif  // HOPLAB_VOCAB_HPP_
