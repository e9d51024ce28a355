// Copyright 2026 The LM-DFL Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include <cstdint>
#include <random>

namespace lmdfl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Purpose tags keep the SGD and quantizer streams of one node/round
// independent, so swapping the quantizer never perturbs minibatch draws.
enum class StreamPurpose : std::uint64_t {
  kSampling = 1,
  kQuantizer = 2,
  kInit = 3,
  kPartition = 4,
  kData = 5,
};

inline Rng derive_stream(std::uint64_t master_seed, std::uint64_t node,
                         std::uint64_t round, StreamPurpose purpose) {
  std::uint64_t h = mix64(master_seed);
  h = mix64(h ^ node);
  h = mix64(h ^ (round * 0x632be59bd9b4e019ULL));
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  return Rng(h);
}

// Uniform double in [0, 1) from the top 53 bits; portable across standard
// libraries, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace lmdfl
