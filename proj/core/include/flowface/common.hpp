#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace flowface {

/// Bad dimensions, bad options, untrained components.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed files: bad magic, truncated payloads, mismatched manifests.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure at runtime (NaN loss, divergence).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void require_format(bool ok, const std::string& msg) {
  if (!ok) throw FormatError(msg);
}

/// Deterministic PRNG used for every random draw in the project.
///
/// xoshiro256** seeded through splitmix64, with explicit uniform and
/// Box-Muller normal transforms. std::random distributions are
/// implementation-defined, so they are avoided: the same seed must give
/// the same stream on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Two uniforms per call, no caching.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return int(next_u64() % uint64_t(n));
  }

  /// Derives a child seed; used to give each step / stream its own Rng.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a * 0x9e3779b97f4a7c15ULL + b;
    x = splitmix64(x);
    return x;
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
};

}  // namespace flowface
