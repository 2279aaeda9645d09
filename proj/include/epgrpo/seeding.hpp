#pragma once

/**
 * Deterministic seed derivation and portable uniform doubles. Everything
 * downstream of a run seed goes through these helpers so that identical
 * configurations reproduce bit-identical streams on any platform.
 */

#include <cstdint>
#include <initializer_list>
#include <random>

namespace epgrpo {

// splitmix64 step; the standard 64-bit mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable child seed from a base seed and a path of indices.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = base ^ 0x6a09e667f3bcc909ULL;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t p : path) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

// Uniform double in [0, 1) with 53 random bits. Used instead of
// std::uniform_real_distribution, whose output is implementation-defined.
inline double uniform_unit(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace epgrpo
