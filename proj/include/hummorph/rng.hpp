#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hummorph {

// Seed derivation for independent sub-streams (splitmix64 finalizer).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled draws so streams do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t bits() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return (double)(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t n) {  // [0, n)
    return n > 0 ? (int64_t)(uniform() * (double)n) : 0;
  }

  // Standard normal via Box-Muller; one value per call, no caching.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Rng fork(uint64_t stream) { return Rng(mix_seed(bits(), stream)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hummorph
