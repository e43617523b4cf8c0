#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace modcred {

// Uniform draw in [0, 1) with 53 bits, independent of library distribution
// implementations so streams are stable across platforms.
inline double rngUnit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes two draws.
inline double rngNormal(std::mt19937_64& rng) {
  double u1 = rngUnit(rng);
  while (u1 <= 0.0) u1 = rngUnit(rng);
  const double u2 = rngUnit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Derives an independent stream for a (seed, role) pair.
inline std::uint64_t mixSeed(std::uint64_t seed, std::uint64_t role) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (role + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

}  // namespace modcred
