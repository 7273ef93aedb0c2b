#pragma once

#include <cstdint>
#include <string_view>

namespace tashkeel::numerics {

inline constexpr uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline constexpr uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2));
}

inline constexpr uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Counter-based generator. Streams are addressed by
/// (seed, purpose, a, b), so any draw is reproducible from its address
/// and call index alone, independent of other streams.
class RngStream {
 public:
  RngStream(uint64_t seed, std::string_view purpose, uint64_t a = 0, uint64_t b = 0)
      : key_(hash_combine(hash_combine(hash_combine(seed, hash_str(purpose)), a), b)) {}

  uint64_t next_u64() { return mix64(key_ ^ (0x9e3779b97f4a7c15ull * ++counter_)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  uint64_t calls() const { return counter_; }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace tashkeel::numerics
