#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace safe {

// Counter-based random stream.
//
// Draw k of a stream with seed s is splitmix64_mix(s + (k + 1) * 0x9E3779B97F4A7C15).
// Uniforms take the top 53 bits: u = ((bits >> 11) + 1) * 2^-53, so u lies in (0, 1].
// Normal draw k consumes uniforms 2k and 2k+1 through the cosine branch of
// Box-Muller: sqrt(-2 ln u_{2k}) * cos(2 pi u_{2k+1}).
//
// Because every draw is a pure function of (seed, index), any other
// implementation can replay a stream exactly from the seed alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t bits_at(std::uint64_t seed, std::uint64_t index) {
    return mix(seed + (index + 1) * 0x9E3779B97F4A7C15ULL);
  }

  static double uniform_at(std::uint64_t seed, std::uint64_t index) {
    return static_cast<double>((bits_at(seed, index) >> 11) + 1) * 0x1.0p-53;
  }

  static double normal_at(std::uint64_t seed, std::uint64_t index) {
    const double u1 = uniform_at(seed, 2 * index);
    const double u2 = uniform_at(seed, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_u64() { return bits_at(seed_, counter_++); }

  double uniform() { return uniform_at(seed_, counter_++); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n). Modulo bias is below 2^-40 for the sizes used here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Derives an independent child seed, e.g. per trial or per component.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return CounterRng::mix(base ^ CounterRng::mix(salt + 0x632BE59BD9B4E019ULL));
}

}  // namespace safe
