#pragma once

// Deterministic seeding. Every random draw in the project flows from an
// explicit 64-bit seed; substream seeds for slides, epochs and parameter
// init are derived with splitmix64 so streams stay independent of loop
// order and of each other.

#include <cstdint>
#include <random>

namespace hiclass {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ splitmix64(b ^ 0x6a09e667f3bcc909ULL));
}

template <class... Rest>
std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                           Rest... rest) {
  return seed_combine(seed_combine(a, b), c, rest...);
}

}  // namespace hiclass
