#pragma once

// Seedable, platform-stable random number generation. xoshiro256** for the
// stream, splitmix64 for seeding and stream derivation. std:: distributions
// are implementation-defined, so every draw here is built from raw 64-bit
// words and exact IEEE arithmetic (no transcendentals).

#include <array>
#include <cstdint>
#include <cmath>

#include <Eigen/Core>

namespace arbor {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Mix a base seed with up to three stream ids into one 64-bit seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64_next(s);
  s ^= a + 0x9e3779b97f4a7c15ull;
  h ^= splitmix64_next(s);
  s ^= b + 0xbf58476d1ce4e5b9ull;
  h ^= splitmix64_next(s);
  s ^= c + 0x94d049bb133111ebull;
  h ^= splitmix64_next(s);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64_next(s);
  }

  /// Independent generator for (seed, a, b, c). Episode collection, epoch
  /// shuffles, etc. each take their own stream so results are independent
  /// of scheduling order.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    return Rng(mix_seed(seed, a, b, c));
  }

  std::uint64_t next() {
    auto rotl = [](std::uint64_t x, int k) {
      return (x << k) | (x >> (64 - k));
    };
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection on the top bits.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t mask = ~std::uint64_t{0} >> __builtin_clzll(n - 1 | 1);
    std::uint64_t v;
    do {
      v = next() & mask;
    } while (v >= n);
    return v;
  }

  /// Inclusive integer range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// Uniform point in the closed unit ball, by rejection from the cube.
  Eigen::Vector3d in_unit_ball() {
    for (;;) {
      Eigen::Vector3d p(uniform(-1.0, 1.0), uniform(-1.0, 1.0),
                        uniform(-1.0, 1.0));
      if (p.squaredNorm() <= 1.0) return p;
    }
  }

  /// Uniform direction on the unit sphere (rejection, then normalize; only
  /// sqrt is used so the result is platform-stable).
  Eigen::Vector3d unit_vector() {
    for (;;) {
      Eigen::Vector3d p = in_unit_ball();
      const double n2 = p.squaredNorm();
      if (n2 > 1e-12) return p / std::sqrt(n2);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_;
};

}  // namespace arbor
