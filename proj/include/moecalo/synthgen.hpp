// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Seedable parametric generator of calorimeter-like (conditions, response)
// pairs. Responses follow three regimes: low-intensity dispersed blobs,
// medium-intensity blobs, and high-intensity focused blobs, with the
// regime recoverable from the conditioning vector. Pixel counts carry
// Poisson noise. Every conditioning vector appears twice (independent
// noise) so the diversity-scale groups are non-singleton.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "moecalo/dataset.hpp"
#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/rng.hpp"

namespace moecalo {

inline constexpr int kSynthModes = 3;

struct SynthConfig {
  CalorimeterSpec spec = CalorimeterSpec::zn();
  int n_samples = 1000;
  std::uint64_t seed = 0;
  std::array<double, kSynthModes> mode_fractions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  /// Total photon count drawn uniformly per sample, one range per mode,
  /// ordered low < medium < high in mean.
  std::array<std::pair<double, double>, kSynthModes> intensity_ranges = {
      {{50.0, 200.0}, {500.0, 1500.0}, {3000.0, 8000.0}}};
  /// Gaussian blob sigma in pixels, one range per mode (wide to focused).
  std::array<std::pair<double, double>, kSynthModes> spread_ranges = {
      {{6.0, 10.0}, {3.0, 5.0}, {1.0, 2.0}}};

  void validate() const {
    if (n_samples <= 0) throw ValidationError("synth: n_samples must be > 0");
    double fsum = 0.0;
    for (double f : mode_fractions) {
      if (f < 0) throw ValidationError("synth: mode_fractions must be >= 0");
      fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9)
      throw ValidationError("synth: mode_fractions must sum to 1");
    for (const auto& [lo, hi] : intensity_ranges)
      if (!(lo < hi) && lo != hi)
        throw ValidationError("synth: intensity range must have lo <= hi");
    for (const auto& [lo, hi] : spread_ranges)
      if (!(lo < hi)) throw ValidationError("synth: spread range must have lo < hi");
    for (int m = 0; m + 1 < kSynthModes; ++m) {
      const double mean_lo = 0.5 * (intensity_ranges[m].first + intensity_ranges[m].second);
      const double mean_hi =
          0.5 * (intensity_ranges[m + 1].first + intensity_ranges[m + 1].second);
      if (!(mean_lo < mean_hi))
        throw ValidationError("synth: intensity ranges must be ordered by mean");
    }
  }
};

struct SynthResult {
  Dataset data;
  std::vector<int> mode_labels;  // per sample, 0..2
};

namespace detail {

/// Renders an isotropic Gaussian blob normalized to integrate to `total`
/// over the in-grid pixels, then draws per-pixel Poisson counts.
inline void render_blob(const CalorimeterSpec& spec, double cy, double cx,
                        double sigma, double total, Rng& noise_rng, float* out) {
  const int h = spec.height, w = spec.width;
  std::vector<double> mass(static_cast<std::size_t>(h) * w);
  double norm = 0.0;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dr = r - cy, dc = c - cx;
      const double g = std::exp(-(dr * dr + dc * dc) * inv2s2);
      mass[static_cast<std::size_t>(r) * w + c] = g;
      norm += g;
    }
  }
  const double scale = norm > 0 ? total / norm : 0.0;
  for (std::size_t j = 0; j < mass.size(); ++j) {
    const double lambda = mass[j] * scale;
    out[j] = lambda > 0 ? static_cast<float>(noise_rng.poisson(lambda)) : 0.0f;
  }
}

inline int draw_mode(const std::array<double, kSynthModes>& fractions, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int m = 0; m < kSynthModes; ++m) {
    acc += fractions[m];
    if (u < acc) return m;
  }
  return kSynthModes - 1;
}

struct DrawnSample {
  ParticleConditions cond;
  int mode = 0;
  double energy = 0, sigma = 0, cx = 0, cy = 0;
};

/// Draws one conditioning vector (shared by a duplicate pair) keyed by
/// the pair index.
inline DrawnSample draw_sample(const SynthConfig& cfg, std::uint64_t group) {
  static constexpr std::array<float, 3> kMasses = {0.938f, 0.135f, 0.494f};
  static constexpr std::array<float, 3> kCharges = {1.0f, 0.0f, -1.0f};
  auto rng = Rng::keyed(cfg.seed, Stream::Synth, {group});
  DrawnSample d;
  d.mode = draw_mode(cfg.mode_fractions, rng);
  const auto [ilo, ihi] = cfg.intensity_ranges[static_cast<std::size_t>(d.mode)];
  const auto [slo, shi] = cfg.spread_ranges[static_cast<std::size_t>(d.mode)];
  d.energy = rng.uniform(ilo, ihi);
  d.sigma = rng.uniform(slo, shi);
  auto& c = d.cond;
  c.energy = static_cast<float>(d.energy);
  c.mass = kMasses[rng.index(kMasses.size())];
  c.charge = kCharges[rng.index(kCharges.size())];
  c.pos_x = static_cast<float>(rng.uniform(-1.0, 1.0));
  c.pos_y = static_cast<float>(rng.uniform(-1.0, 1.0));
  c.pos_z = static_cast<float>(rng.uniform(-1.0, 1.0));
  // Momenta encode the blob center inside the middle 70% of the grid.
  c.mom_x = static_cast<float>(rng.uniform(-1.0, 1.0));
  c.mom_y = static_cast<float>(rng.uniform(-1.0, 1.0));
  c.mom_z = static_cast<float>(rng.uniform(2.0, 10.0));
  d.cx = (cfg.spec.width - 1) * (0.5 + 0.35 * c.mom_x);
  d.cy = (cfg.spec.height - 1) * (0.5 + 0.35 * c.mom_y);
  return d;
}

}  // namespace detail

/// Generates the configured number of samples. Sample i and i+1 (even i)
/// share one conditioning vector with independent Poisson noise. All
/// randomness is keyed per conditioning index, so output is independent
/// of any internal parallelization.
inline SynthResult synthesize(const SynthConfig& cfg) {
  cfg.validate();
  SynthResult out;
  out.data.spec = cfg.spec;
  out.data.conditions.resize(static_cast<std::size_t>(cfg.n_samples));
  out.data.responses.resize(static_cast<std::size_t>(cfg.n_samples) *
                            static_cast<std::size_t>(cfg.spec.pixels()));
  out.mode_labels.resize(static_cast<std::size_t>(cfg.n_samples));

  for (int i = 0; i < cfg.n_samples; i += 2) {
    const auto group = static_cast<std::uint64_t>(i / 2);
    const auto d = detail::draw_sample(cfg, group);
    for (int dup = 0; dup < 2 && i + dup < cfg.n_samples; ++dup) {
      const auto idx = static_cast<std::size_t>(i + dup);
      auto noise = Rng::keyed(cfg.seed, Stream::Synth,
                              {group, 0xfeedULL + static_cast<std::uint64_t>(dup)});
      detail::render_blob(cfg.spec, d.cy, d.cx, d.sigma, d.energy, noise,
                          out.data.responses.data() +
                              idx * static_cast<std::size_t>(cfg.spec.pixels()));
      out.data.conditions[idx] = d.cond;
      out.mode_labels[idx] = d.mode;
    }
  }
  return out;
}

/// Conditions only (no rendering); used by benchmarks that need inputs
/// without the Poisson rendering cost.
inline std::vector<ParticleConditions> synthesize_conditions(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<ParticleConditions> out(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; i += 2) {
    const auto d = detail::draw_sample(cfg, static_cast<std::uint64_t>(i / 2));
    for (int dup = 0; dup < 2 && i + dup < cfg.n_samples; ++dup)
      out[static_cast<std::size_t>(i + dup)] = d.cond;
  }
  return out;
}

/// Recovers the regime label from a conditioning vector by bracketing its
/// energy field with the configured ranges (nearest range midpoint when
/// Poisson smearing pushes it outside every bracket).
inline int mode_from_conditions(const SynthConfig& cfg, const ParticleConditions& c) {
  for (int m = 0; m < kSynthModes; ++m) {
    if (c.energy >= cfg.intensity_ranges[static_cast<std::size_t>(m)].first &&
        c.energy <= cfg.intensity_ranges[static_cast<std::size_t>(m)].second)
      return m;
  }
  int best = 0;
  double best_d = 1e300;
  for (int m = 0; m < kSynthModes; ++m) {
    const auto& [lo, hi] = cfg.intensity_ranges[static_cast<std::size_t>(m)];
    const double d = std::abs(c.energy - 0.5 * (lo + hi));
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

}  // namespace moecalo
