// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cmaxloc {

// splitmix64 finalizer, used to derive independent seed streams from a base
// seed plus stream/index material.
inline uint64_t MixSeed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t MixSeed(uint64_t a, uint64_t b) { return MixSeed(MixSeed(a) + b); }

inline uint64_t MixSeed(uint64_t a, uint64_t b, uint64_t c) {
  return MixSeed(MixSeed(a, b) + c);
}

inline uint64_t MixSeed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return MixSeed(MixSeed(a, b, c) + d);
}

// Deterministic random source. std::mt19937_64 produces a portable bit
// stream; the distribution helpers below avoid the standard distribution
// objects, whose output is implementation defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t NextU64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double Uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform01(); }

  // Uniform integer in [0, n). Fixed-point multiply keeps the draw count at
  // one word per call regardless of n.
  int UniformBelow(int n) {
    const auto wide = static_cast<unsigned __int128>(gen_());
    return static_cast<int>((wide * static_cast<unsigned __int128>(n)) >> 64);
  }

  int UniformInt(int lo, int hi) { return lo + UniformBelow(hi - lo + 1); }

  // Box-Muller without state; consumes exactly two draws per call.
  double Normal(double mean, double stddev) {
    const double u1 = 1.0 - Uniform01();
    const double u2 = Uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cmaxloc
