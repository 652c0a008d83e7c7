#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace tacsync {

/// SplitMix64 (Steele, Lea & Flood 2014). 64-bit state advanced by the golden
/// gamma, output passed through the murmur3-style finalizer. The sequence is
/// fully defined by integer arithmetic, so a seed produces the same stream on
/// every platform. Normals use Box-Muller with a cached second deviate instead
/// of <random> distributions, whose output is implementation-defined.
///
/// Not thread-safe; parallel work gets its own generator via split() or
/// derive_seed().
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift; bias is below 2^-32 for the
  // sizes used here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  Rng split(std::uint64_t key) const { return Rng(mix(state_ ^ mix(key + 1))); }

  std::uint64_t state() const { return state_; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over the bytes of a name.
constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed for (global seed, module name, index). Every random stream in the
/// project is derived this way so that work items are independent of the
/// order in which they run.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view module,
                                    std::uint64_t index = 0) {
  return Rng::mix(Rng::mix(seed ^ hash_name(module)) + Rng::mix(index + 0x51ED27ULL));
}

}  // namespace tacsync
