// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random number generation. Every stochastic draw in the
// project is keyed by (root seed, stream, counters...), so results are
// identical no matter how work is batched or how many workers run.

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace moecalo {

/// Named sub-streams hanging off the single root seed.
enum class Stream : std::uint64_t {
  Init = 1,     // network parameter initialization
  Split = 2,    // train/test split shuffle
  Shuffle = 3,  // per-epoch batch order
  Noise = 4,    // latent noise during training
  Synth = 5,    // synthetic data generation
  Eval = 6,     // latent noise during evaluation / generation
  Bench = 7,    // benchmark inputs
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
  return splitmix64(s);
}

}  // namespace detail

/// Small deterministic generator. Normal variates use Box-Muller and
/// Poisson variates Knuth's product method (chunked for large means),
/// so sequences are bit-reproducible across platforms and library
/// versions, unlike the std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derives an independent generator from a key tuple.
  static Rng keyed(std::uint64_t root, Stream stream,
                   std::initializer_list<std::uint64_t> ids = {}) {
    std::uint64_t s = detail::mix(root, static_cast<std::uint64_t>(stream));
    for (std::uint64_t id : ids) s = detail::mix(s, id);
    return Rng(s);
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1]; never returns zero (safe under log).
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64.
    return n ? next_u64() % n : 0;
  }

  /// Standard normal via Box-Muller; consumes exactly two raw draws.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson variate. Exact for any mean: large means are decomposed
  /// into independent chunks small enough for Knuth's method.
  std::int64_t poisson(double mean) {
    std::int64_t total = 0;
    while (mean > 500.0) {
      total += poisson_small(500.0);
      mean -= 500.0;
    }
    if (mean > 0.0) total += poisson_small(mean);
    return total;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::int64_t poisson_small(double mean) {
    const double limit = std::exp(-mean);
    std::int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform_pos();
    } while (p > limit);
    return k - 1;
  }

  std::uint64_t state_;
};

}  // namespace moecalo
