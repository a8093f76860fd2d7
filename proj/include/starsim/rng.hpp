#pragma once

#include <cstdint>
#include <string_view>

#include "starsim/common.hpp"

namespace starsim {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer; bijective on 64-bit integers.
inline std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Key of the stream (master, purpose, index). Streams for distinct
/// purposes are derived by hashing; this is what makes parallel Monte Carlo
/// trials order-independent.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t index = 0) {
  std::uint64_t k = detail::mix64(master ^ detail::fnv1a64(purpose));
  return detail::mix64(k + index * detail::kGolden);
}

/// Counter-based generator. The i-th output is a pure function of
/// (key, i), so a stream can be recomputed or split without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static CounterRng derive(std::uint64_t master, std::string_view purpose,
                           std::uint64_t index = 0) {
    return CounterRng(derive_seed(master, purpose, index));
  }

  std::uint64_t next_u64() { return detail::mix64(key_ + (counter_++) * detail::kGolden); }

  /// Uniform double in (0, 1).
  double uniform01() {
    // 53 mantissa bits; offset keeps the value strictly positive for log().
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Circularly-symmetric complex Gaussian with E|z|^2 = 1.
  cdouble cnormal() {
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-std::log(u1));
    return std::polar(r, 2.0 * kPi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace starsim
