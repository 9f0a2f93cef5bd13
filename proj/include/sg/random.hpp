#pragma once

#include <cstdint>

namespace sg {

// SplitMix64 finalizer (Steele, Lea, Flood 2014). Used as a counter-based
// generator: the i-th value of a stream is fully determined by (seed, i),
// so draws are reproducible regardless of evaluation order and no generator
// state is shared between call sites.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// i-th raw 64-bit value of the stream identified by `seed`.
inline std::uint64_t counter_rand_u64(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed + index * 0x9e3779b97f4a7c15ULL);
}

// i-th value of the stream mapped to [0, 1). 53 mantissa bits.
inline double counter_rand_unit(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(counter_rand_u64(seed, index) >> 11) * 0x1.0p-53;
}

// Deterministic seed derivation for sub-streams (per-epoch shuffles,
// per-iteration noise, per-parameter init).
inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return seed_combine(seed_combine(a, b), c);
}

}  // namespace sg
