// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "moecalo/rng.hpp"

using moecalo::Rng;
using moecalo::Stream;

TEST_CASE("keyed streams are reproducible and distinct") {
  auto a1 = Rng::keyed(42, Stream::Noise, {1, 2});
  auto a2 = Rng::keyed(42, Stream::Noise, {1, 2});
  auto b = Rng::keyed(42, Stream::Noise, {1, 3});
  auto c = Rng::keyed(42, Stream::Synth, {1, 2});
  const auto x = a1.next_u64();
  REQUIRE(x == a2.next_u64());
  REQUIRE(x != b.next_u64());
  REQUIRE(x != c.next_u64());
}

TEST_CASE("uniform stays in [0,1) and uniform_pos in (0,1]") {
  auto rng = Rng::keyed(7, Stream::Noise);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double v = rng.uniform_pos();
    REQUIRE(v > 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("normal moments") {
  auto rng = Rng::keyed(11, Stream::Noise);
  const int n = 200000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.01);
  REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("poisson mean and variance, small and large lambda") {
  for (double lambda : {0.5, 7.0, 120.0, 2000.0}) {
    auto rng = Rng::keyed(13, Stream::Synth, {static_cast<std::uint64_t>(lambda)});
    const int n = 20000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
      const double k = static_cast<double>(rng.poisson(lambda));
      REQUIRE(k >= 0);
      sum += k;
      sumsq += k * k;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    // mean and variance both equal lambda; allow 5 sigma of the estimators
    const double mean_tol = 5.0 * std::sqrt(lambda / n);
    REQUIRE(std::abs(mean - lambda) < mean_tol);
    REQUIRE(std::abs(var - lambda) < 0.1 * lambda + 5.0 * lambda * std::sqrt(2.0 / n));
  }
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> xs(100);
  for (int i = 0; i < 100; ++i) xs[static_cast<std::size_t>(i)] = i;
  auto r1 = Rng::keyed(3, Stream::Shuffle, {0});
  auto r2 = Rng::keyed(3, Stream::Shuffle, {0});
  auto ys = xs;
  r1.shuffle(xs);
  r2.shuffle(ys);
  REQUIRE(xs == ys);
  auto sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) REQUIRE(sorted[static_cast<std::size_t>(i)] == i);
}
