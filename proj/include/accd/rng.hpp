#pragma once

#include <cstdint>

// Deterministic randomness: a splitmix64 finalizer is used for seeding,
// hashing and substream derivation; the stream generator is xoshiro256++.
// Replicas and runs get disjoint substreams from (seed, index) so results
// are reproducible bit-for-bit regardless of scheduling.

namespace accd {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SplitMix64 {
  std::uint64_t s = 0;
  std::uint64_t next() {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  Rng() : Rng(1) {}
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm{seed};
    for (auto& w : s_) w = sm.next();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // never all-zero
  }

  // Disjoint substream r of a master seed (replica / run / noise channels).
  static Rng substream(std::uint64_t seed, std::uint64_t r) {
    return Rng(mix64(seed) ^ mix64(0x517cc1b727220a95ULL * (r + 1)));
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0,1), 53-bit resolution, never returns 1
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in [lo,hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // uniform integer in [0,n)
  std::uint64_t below(std::uint64_t n) { return next() % n; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Deterministic sign in {-1,+1} from (seed, coordinate, call index).
inline double hash_sign(std::uint64_t seed, std::uint64_t i, std::uint64_t call) {
  const std::uint64_t h = mix64(seed ^ mix64(i + 1) ^ mix64((call + 1) * 0x2545f4914f6cdd1dULL));
  return (h >> 63) ? 1.0 : -1.0;
}

}  // namespace accd
