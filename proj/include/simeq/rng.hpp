// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace simeq {

// Counter-based seed derivation. A root seed is split per subsystem (stream)
// and per item (index), so the order in which subsystems draw numbers never
// changes what any one of them sees.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
  kInit = 1,
  kData = 2,
  kShuffle = 3,
  kTransform = 4,
  kAudit = 5,
  kSplit = 6,
};

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

}  // namespace simeq
