#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dilbench {

using Rng = std::mt19937_64;

// Mixes a root seed with stream identifiers (source index, epoch, episode...)
// into an independent 64-bit seed. splitmix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> streams) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(root);
  for (auto s : streams) h = mix(h ^ mix(s));
  return h;
}

}  // namespace dilbench
