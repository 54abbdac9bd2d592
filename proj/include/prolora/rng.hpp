#pragma once

#include <cstdint>

#include "prolora/matrix.hpp"

namespace prolora {

/// Seeded splitmix64 stream.
///
/// next_u64():  state += 0x9E3779B97F4A7C15;
///              z = state;
///              z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
///              z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
///              return z ^ (z >> 31);
/// uniform01(): (next_u64() >> 11) * 2^-53, a value in [0, 1) with 53 random bits.
/// uniform(lo, hi): lo + (hi - lo) * uniform01(), nudged below hi if rounding reaches it.
///
/// Seed 1234567 yields 6457827717110365317, 3203168211198807973, 9817491932198370423, ...
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  double uniform01() noexcept;
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (cosine branch only; one draw consumes two uniforms).
  double normal();
  /// Integer in [lo, hi] inclusive.
  long long integer(long long lo, long long hi);

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng);
Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace prolora
