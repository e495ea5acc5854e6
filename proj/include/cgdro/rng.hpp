#pragma once

#include <cstdint>
#include <random>

namespace cgdro {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream seed for the `index`-th task under `base`. Used so that
/// per-replication and per-draw streams do not depend on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t base, std::uint64_t index) {
  return Rng(derive_seed(base, index));
}

}  // namespace cgdro
