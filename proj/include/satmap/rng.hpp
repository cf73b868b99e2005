#pragma once

#include <cmath>
#include <cstdint>

namespace satmap {

// splitmix64 sequence generator. Bit-stable across platforms and compilers,
// unlike the std::<random> distributions, so seeded artifacts regenerate
// byte-identically.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller (one value per call, no cached state).
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derives an independent stream, e.g. one per scene or per parameter block.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0xA0761D6478BD642Full * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

// FNV-1a, used to derive per-name parameter init streams.
inline uint64_t hash_name(const char* s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (; *s; ++s) h = (h ^ static_cast<uint8_t>(*s)) * 0x100000001B3ull;
  return h;
}

}  // namespace satmap
