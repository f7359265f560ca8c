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

#ifndef HOPLAB_RNG_HPP_
#define HOPLAB_RNG_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace hoplab {

// Seed splitting. A master seed fans out into independent streams named by a
// tag and an index:
//
//   derive_seed(s, tag, i) = splitmix64(splitmix64(s ^ fnv1a64(tag)) + i)
//
// Streams are addressed by (tag, index) rather than by draw order, so a stage
// or worker can be re-run in isolation and parallel work stays reproducible
// no matter how it is scheduled.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                          std::uint64_t index = 0);

// Thin wrapper around mt19937_64. The engine's output sequence is fixed by the
// standard; the sampling helpers below avoid std::*_distribution so draws are
// bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  // Index drawn proportionally to non-negative weights. Zero-weight entries
  // are never returned; all-zero weights fall back to the last positive one.
  std::size_t categorical(std::span<const double> weights);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_int(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hoplab

#endif  // HOPLAB_RNG_HPP_
