#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace tubedagger {

// Deterministic counter-based generator (splitmix64 finalizer over a keyed
// counter).  Two properties matter here:
//
//  * reproducibility: the stream depends only on (seed, split tags, draw
//    count), never on platform or call interleaving elsewhere;
//  * cheap splitting: split("tag") derives an independent stream, so each
//    purpose (surface sampling, evaluation starts, weight init, ...) gets
//    its own substream and adding draws to one never shifts another.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : key_(mix64(seed ^ kSeedSalt)) {}

  // Derive an independent generator for a named purpose.
  SplitRng split(std::string_view tag) const {
    return SplitRng(mix64(key_ ^ fnv1a64(tag)), 0);
  }

  // Derive an independent generator for an indexed purpose (worker i,
  // episode i, ...).
  SplitRng split(std::uint64_t index) const {
    return SplitRng(mix64(key_ ^ mix64(index + kIndexSalt)), 0);
  }

  std::uint64_t next_u64() {
    counter_ += kGolden;
    return mix64(key_ ^ counter_);
  }

  // Uniform in the open interval (0, 1): 53-bit mantissa, offset by half an
  // ulp so 0 and 1 are unreachable.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection of the biased low range.
    std::uint64_t x = next_u64();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        x = next_u64();
        m = static_cast<unsigned __int128>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller; the second variate of each pair is
  // cached, so draws come in a fixed deterministic order.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char c : text) {
      hash ^= static_cast<unsigned char>(c);
      hash *= 0x100000001b3ULL;
    }
    return hash;
  }

 private:
  SplitRng(std::uint64_t key, std::uint64_t counter)
      : key_(key), counter_(counter) {}

  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x7475626564616767ULL;
  static constexpr std::uint64_t kIndexSalt = 0x736c6963655f6964ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tubedagger
