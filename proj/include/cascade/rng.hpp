#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

namespace cascade {

// splitmix64, used for seeding and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256++ with a Box-Muller normal sampler. Self-contained so that
// sample streams are identical across platforms and standard libraries.
// Independent streams are derived by hashing (seed, stream ids) together.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream_a = 0,
               std::uint64_t stream_b = 0, std::uint64_t stream_c = 0) {
    std::uint64_t sm = seed;
    sm ^= 0x8e9b3d7c5a1f0e24ull * (stream_a + 1);
    sm ^= 0xc4ceb9fe1a85ec53ull * (stream_b + 1);
    sm ^= 0xff51afd7ed558ccdull * (stream_c + 1);
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in (lo, hi]
  double uniform_open_lo(double lo, double hi) {
    return hi - (hi - lo) * uniform();
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stable 64-bit hash of a string, for deriving per-node RNG streams.
inline std::uint64_t stream_id(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace cascade
