//
// Copyright 2026 The dpfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPFED_RNG_HPP_
#define DPFED_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dpfed {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hashes a master seed together with an ordered list of stream coordinates
// (round, client id, purpose tag, ...) into an independent stream seed.
// Streams depend only on their coordinates, never on execution order, so work
// may be spread across any number of threads without changing results.
constexpr std::uint64_t DeriveSeed(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = Mix64(master);
  for (std::uint64_t p : path) h = Mix64(h ^ Mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng MakeStream(std::uint64_t master,
                      std::initializer_list<std::uint64_t> path) {
  return Rng(DeriveSeed(master, path));
}

// Purpose tags for DeriveSeed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kSample = 3;
inline constexpr std::uint64_t kClient = 4;
inline constexpr std::uint64_t kNoise = 5;
inline constexpr std::uint64_t kSweepCell = 6;
}  // namespace stream

}  // namespace dpfed

#endif  // DPFED_RNG_HPP_
