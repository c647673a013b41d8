// Copyright 2026 The crelay Authors
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

#ifndef CRELAY_RANDOM_HPP
#define CRELAY_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace crelay {

/// Generator used everywhere. mt19937_64 output is specified bit-for-bit by
/// the standard; the draws below avoid std::*_distribution so results are
/// identical across standard library implementations.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a base seed and a path of stream labels.
///
/// Seed derivation rule: fold every label into the running state with
/// `state = mix64(state ^ mix64(label + position))`. The same (base, path)
/// always yields the same seed; distinct paths give independent streams.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = mix64(base);
  std::uint64_t position = 0;
  for (std::uint64_t label : path) {
    state = mix64(state ^ mix64(label + 0x632be59bd9b4e019ULL * ++position));
  }
  return state;
}

/// Stable 64-bit label for a short ASCII tag, usable as a derive_seed label.
constexpr std::uint64_t stream_tag(const char* tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (; *tag != '\0'; ++tag) {
    h ^= static_cast<unsigned char>(*tag);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unit-mean exponential variate; |H|^2 for a unit-variance complex Gaussian H.
/// Strictly positive.
inline double unit_exponential(Rng& rng) {
  // 1 - u lies in (0, 1], so the log is finite; add a half ulp so the result
  // is never exactly zero.
  const double u = uniform01(rng);
  return -std::log1p(-u) + 0x1.0p-54 * (u == 0.0);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace crelay

#endif  // CRELAY_RANDOM_HPP
