#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>

namespace olala {

// splitmix64 finalizer applied to x + golden gamma.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent 64-bit seed from a root seed and a tag (round, client
/// id, purpose). Used for every per-round / per-client stream split.
constexpr std::uint64_t mix_seed(std::uint64_t root, std::uint64_t tag) noexcept {
  return splitmix64(splitmix64(root) ^ (tag * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Counter-based uniform draw: a pure function of (key, counter). The k-th
/// value equals the k-th output of a splitmix64 sequence started at `key`.
constexpr double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  return unit_interval(splitmix64(key + counter * 0x9E3779B97F4A7C15ULL));
}

/// Sequential generator with portable distributions. Standard library
/// distributions are implementation-defined, which would break byte-identical
/// outputs across toolchains, so the few we need live here.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t out = splitmix64(state_);
    state_ += 0x9E3779B97F4A7C15ULL;
    return out;
  }

  double uniform() noexcept { return unit_interval((*this)()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r;
    do {
      r = (*this)();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller (both halves used).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// +1 or -1 with equal probability.
  double sign() noexcept { return ((*this)() >> 63) ? 1.0 : -1.0; }

  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace olala
