#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace prism {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// FNV-1a over a purpose label, used to derive independent streams.
constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Counter-based generator: word i of stream `key` is
/// mix64(key + (i + 1) * 0x9E3779B97F4A7C15). Identical on every platform,
/// and any position can be reached without replaying earlier draws.
///
/// Uniform floats take the top 53 bits; normals use Box-Muller on two
/// consecutive uniforms (the second variate is discarded so that each
/// normal consumes exactly two words).
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  constexpr explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

  constexpr std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, so the result is unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream, independent of this one's position.
  CounterRng derive(std::string_view purpose, std::uint64_t index = 0) const {
    return CounterRng(mix64(key_ ^ hash_label(purpose)) + mix64(index + 1));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Root stream for a user-facing seed.
inline CounterRng seed_stream(std::uint64_t seed) { return CounterRng(mix64(seed ^ 0x5052495347454E31ull)); }

}  // namespace prism
