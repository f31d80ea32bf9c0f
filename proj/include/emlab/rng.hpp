#pragma once

// Deterministic, splittable pseudo-random numbers.
//
// Engine: xoshiro256** (Blackman & Vigna), seeded through SplitMix64.
// Every distribution here is implemented locally so that streams are
// bit-identical across standard libraries and platforms; std::*_distribution
// is implementation-defined and is never used for data or measurement.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace emlab {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, used to turn stream labels into 64-bit salts.
constexpr std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Mix any number of 64-bit keys into one seed.
template <typename... Keys>
std::uint64_t mix_seed(std::uint64_t seed, Keys... keys) {
  std::uint64_t state = seed;
  std::uint64_t out = splitmix64(state);
  ((state ^= static_cast<std::uint64_t>(keys) * 0xd6e8feb86659fd93ULL, out ^= splitmix64(state)), ...);
  return out;
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    has_spare_ = false;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Independent child stream; does not advance this generator.
  [[nodiscard]] Rng split(std::uint64_t stream) const {
    return Rng(mix_seed(s_[0] ^ rotl(s_[2], 13), stream));
  }

  /// Uniform integer in [lo, hi] inclusive (Lemire's nearly-divisionless method).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next());
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * range;
    auto low = static_cast<std::uint64_t>(m);
    if (low < range) {
      const std::uint64_t threshold = (0 - range) % range;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next()) * range;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return lo + static_cast<std::int64_t>(m >> 64);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// +1 or -1 with equal probability.
  double rademacher() { return (next() >> 63) ? 1.0 : -1.0; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates shuffle with the local generator.
template <typename Range>
void shuffle(Range& r, Rng& rng) {
  const auto n = static_cast<std::int64_t>(std::size(r));
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = rng.uniform_int(0, i);
    using std::swap;
    swap(r[static_cast<std::size_t>(i)], r[static_cast<std::size_t>(j)]);
  }
}

}  // namespace emlab
