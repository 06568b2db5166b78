// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"

namespace moecalo {

/// Pixel value transform between photon-count space and the [-1,1] space
/// the networks operate in: y = 2*log1p(count)/log_max - 1.
///
/// log_max is fitted on the training split and persisted in checkpoints so
/// that generation uses exactly the scaling seen in training.
struct ValueTransform {
  /// Slack beyond [-1,1] tolerated on inverse inputs before warning.
  static constexpr float kRangeSlack = 0.05f;

  float log_max = 1.0f;

  static ValueTransform fit(std::span<const float> counts) {
    float max_count = 0.0f;
    for (float p : counts) max_count = std::max(max_count, p);
    ValueTransform t;
    t.log_max = std::max(std::log1p(max_count), 1e-6f);
    return t;
  }

  float forward(float count) const {
    return 2.0f * std::log1p(count) / log_max - 1.0f;
  }

  /// Maps back to count space; outputs are clamped at zero.
  float inverse(float y) const {
    const float count = std::expm1((y + 1.0f) * 0.5f * log_max);
    return std::max(count, 0.0f);
  }

  void forward_grid(std::span<const float> counts, std::span<float> out) const {
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = forward(counts[i]);
  }

  /// Inverse over a grid. Returns the number of inputs outside
  /// [-1-slack, 1+slack]; such values are clamped into [-1, 1] first.
  int inverse_grid(std::span<const float> ys, std::span<float> out) const {
    int out_of_range = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      float y = ys[i];
      if (y < -1.0f - kRangeSlack || y > 1.0f + kRangeSlack) ++out_of_range;
      y = std::clamp(y, -1.0f, 1.0f);
      out[i] = inverse(y);
    }
    return out_of_range;
  }

  /// d(count)/dy at y, zero where the inverse clamps.
  double inverse_deriv(double y) const {
    if (y < -1.0 || y > 1.0) return 0.0;
    return std::exp((y + 1.0) * 0.5 * static_cast<double>(log_max)) * 0.5 *
           static_cast<double>(log_max);
  }
};

/// Per-field affine standardizer for conditioning vectors. Fitted on the
/// training split, persisted in checkpoints.
struct Standardizer {
  std::array<float, kCondDim> mean{};
  std::array<float, kCondDim> stdev{};

  Standardizer() { stdev.fill(1.0f); }

  static Standardizer fit(std::span<const ParticleConditions> conds) {
    if (conds.empty()) throw ValidationError("standardizer: empty conditions");
    Standardizer s;
    std::array<double, kCondDim> sum{}, sumsq{};
    for (const auto& c : conds) {
      const auto a = c.to_array();
      for (int j = 0; j < kCondDim; ++j) {
        sum[j] += a[j];
        sumsq[j] += static_cast<double>(a[j]) * a[j];
      }
    }
    const double n = static_cast<double>(conds.size());
    for (int j = 0; j < kCondDim; ++j) {
      const double m = sum[j] / n;
      const double var = std::max(sumsq[j] / n - m * m, 0.0);
      s.mean[j] = static_cast<float>(m);
      // Constant fields pass through unscaled.
      s.stdev[j] = var < 1e-12 ? 1.0f : static_cast<float>(std::sqrt(var));
    }
    return s;
  }

  std::array<float, kCondDim> apply(const ParticleConditions& c) const {
    std::array<float, kCondDim> out{};
    const auto a = c.to_array();
    for (int j = 0; j < kCondDim; ++j) out[j] = (a[j] - mean[j]) / stdev[j];
    return out;
  }
};

}  // namespace moecalo
