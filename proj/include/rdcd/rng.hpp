#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <string_view>

namespace rdcd {

// Counter-based splittable generator. Draws are a SplitMix64 walk keyed by a
// 64-bit stream key; split("label") derives a child key from (key, label)
// only, so a child stream never depends on how far the parent has advanced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ kSeedSalt)) {}

  std::uint64_t next_u64() {
    counter_ += kGamma;
    return mix64(key_ + counter_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two draws per sample, no cached spare.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  Rng split(std::string_view label) const {
    return Rng(mix64(key_ ^ mix64(fnv1a(label))), 0);
  }

  Rng split(std::uint64_t index) const {
    return Rng(mix64(key_ ^ mix64(kIndexSalt + index)), 0);
  }

 private:
  Rng(std::uint64_t key, int) : key_(key) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  static constexpr std::uint64_t kSeedSalt = 0x5851f42d4c957f2dull;
  static constexpr std::uint64_t kIndexSalt = 0x2545f4914f6cdd1dull;

  static std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rdcd
