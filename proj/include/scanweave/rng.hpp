#pragma once

// Counter-based random numbers.
//
// A stream is identified by (seed, stream id). Draw k of a stream is
//   mix64(key(seed, stream) + (k + 1) * kGolden)
// where mix64 is the SplitMix64 finalizer. Every draw is a pure function of
// (seed, stream, k), so per-pixel streams give the same bits regardless of
// evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace scanweave {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed ^ 0x5851F42D4C957F2DULL) + stream * 0xD1B54A32D192ED03ULL);
}

/// Bits of draw `counter` in stream `stream` under `seed`.
constexpr std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return mix64(stream_key(seed, stream) + (counter + 1) * kGolden);
}

/// Uniform double in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Derives a child seed from a parent seed and a text tag (FNV-1a of the tag).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return mix64(seed ^ mix64(h));
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(stream_key(seed, stream)) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }
  double uniform() { return to_unit(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace scanweave
