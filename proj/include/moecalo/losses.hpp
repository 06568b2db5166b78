// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Every training objective as a pure function over batches, plus the
// analytic input-gradients the trainers consume. All math is double
// precision; the finite-difference suite in tests/ pins each gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "moecalo/errors.hpp"

namespace moecalo {

/// Loss weights. The router pair (lambda_util, lambda_diff) follows the
/// tuned default configuration; the expert-side weights are conventional
/// values for this data regime.
struct HyperParams {
  double lambda_div = 0.05;
  double lambda_in = 0.001;
  double lambda_aux = 1.0;
  double lambda_util = 0.01;
  double lambda_diff = 0.0001;
  double epsilon = 1e-8;

  void validate() const {
    if (lambda_div < 0 || lambda_in < 0 || lambda_aux < 0 ||
        lambda_util < 0 || lambda_diff < 0)
      throw ValidationError("hyperparams: lambda weights must be >= 0");
    if (epsilon <= 0) throw ValidationError("hyperparams: epsilon must be > 0");
  }
};

namespace losses {

/// Discriminator scores are clamped into [kScoreClamp, 1-kScoreClamp]
/// before any log.
inline constexpr double kScoreClamp = 1e-7;

/// Cap bounding the diversity term's singularity as the two generated
/// images approach each other.
inline constexpr double kDiversityCap = 50.0;

inline double clamp_score(double s) {
  return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp);
}

struct AdvLosses {
  double loss_d = 0.0;
  double loss_g = 0.0;
};

/// Non-saturating adversarial pair:
///   loss_d = -mean(log d_real) - mean(log(1 - d_fake))
///   loss_g = -mean(log d_fake)
inline AdvLosses adversarial_losses(std::span<const double> d_real,
                                    std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty())
    throw ValidationError("adversarial_losses: empty batch");
  double acc_real = 0.0, acc_fake = 0.0, acc_g = 0.0;
  for (double s : d_real) acc_real -= std::log(clamp_score(s));
  for (double s : d_fake) {
    acc_fake -= std::log(1.0 - clamp_score(s));
    acc_g -= std::log(clamp_score(s));
  }
  AdvLosses out;
  out.loss_d = acc_real / static_cast<double>(d_real.size()) +
               acc_fake / static_cast<double>(d_fake.size());
  out.loss_g = acc_g / static_cast<double>(d_fake.size());
  return out;
}

/// Total pixel sum of one grid (photon-count space).
inline double intensity(std::span<const double> pixels) {
  double s = 0.0;
  for (double p : pixels) s += p;
  return s;
}

/// Mean absolute difference of per-sample pixel sums between matched
/// real/generated batches. `real` and `gen` hold `batch` grids of
/// `pixels` values each, flattened contiguously; both in count space.
inline double intensity_loss(std::span<const double> real,
                             std::span<const double> gen, int batch) {
  if (batch <= 0) throw ValidationError("intensity_loss: empty batch");
  if (real.size() != gen.size() || real.size() % static_cast<std::size_t>(batch) != 0)
    throw ValidationError("intensity_loss: shape mismatch");
  const std::size_t pixels = real.size() / static_cast<std::size_t>(batch);
  double acc = 0.0;
  for (int b = 0; b < batch; ++b) {
    acc += std::abs(intensity(real.subspan(b * pixels, pixels)) -
                    intensity(gen.subspan(b * pixels, pixels)));
  }
  return acc / batch;
}

/// Gradients of intensity_loss w.r.t. every pixel of `gen` and `real`.
/// Either output span may be empty to skip it.
inline void intensity_loss_grad(std::span<const double> real,
                                std::span<const double> gen, int batch,
                                std::span<double> d_gen,
                                std::span<double> d_real) {
  if (batch <= 0) throw ValidationError("intensity_loss_grad: empty batch");
  if (real.size() != gen.size())
    throw ValidationError("intensity_loss_grad: shape mismatch");
  const std::size_t pixels = real.size() / static_cast<std::size_t>(batch);
  for (int b = 0; b < batch; ++b) {
    const double diff = intensity(real.subspan(b * pixels, pixels)) -
                        intensity(gen.subspan(b * pixels, pixels));
    const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    for (std::size_t i = b * pixels; i < (b + 1) * pixels; ++i) {
      if (!d_gen.empty()) d_gen[i] = -sgn / batch;
      if (!d_real.empty()) d_real[i] = sgn / batch;
    }
  }
}

/// Inputs for the diversity penalty over one batch: two generated images
/// per conditioning vector, produced from distinct latent codes, plus the
/// per-sample variance scale from the preprocessing tables.
struct DiversityBatch {
  std::span<const double> scale;   // batch values in [0,1]
  std::span<const double> x1, x2;  // batch*pixels, generated grids
  std::span<const double> z1, z2;  // batch*latent, latent codes
  int batch = 0;
  int pixels = 0;
  int latent = 0;

  void check() const {
    if (batch <= 0) throw ValidationError("diversity_loss: empty batch");
    const auto b = static_cast<std::size_t>(batch);
    if (scale.size() != b || x1.size() != b * pixels || x2.size() != b * pixels ||
        z1.size() != b * latent || z2.size() != b * latent)
      throw ValidationError("diversity_loss: shape mismatch");
  }
};

namespace detail {
inline double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}
}  // namespace detail

/// Diversity penalty: batch mean of scale * (d_I/d_z)^-1, each term
/// clamped at kDiversityCap; d_I and d_z are mean absolute differences
/// over pixels and latent coordinates. Identical latent codes are an
/// error; identical images hit the cap.
inline double diversity_loss(const DiversityBatch& in,
                             double cap = kDiversityCap) {
  in.check();
  double acc = 0.0;
  for (int b = 0; b < in.batch; ++b) {
    const double s = in.scale[b];
    if (s <= 0.0) continue;
    const double dz = detail::mean_abs_diff(
        in.z1.subspan(b * in.latent, in.latent),
        in.z2.subspan(b * in.latent, in.latent));
    if (dz == 0.0) throw ValidationError("diversity_loss: identical latent codes");
    const double di = detail::mean_abs_diff(
        in.x1.subspan(b * in.pixels, in.pixels),
        in.x2.subspan(b * in.pixels, in.pixels));
    acc += di == 0.0 ? cap : std::min(s * dz / di, cap);
  }
  return acc / in.batch;
}

/// Gradients of diversity_loss w.r.t. images and latent codes. Output
/// spans may be empty to skip. Terms resting on the cap contribute zero.
inline void diversity_loss_grad(const DiversityBatch& in, std::span<double> dx1,
                                std::span<double> dx2, std::span<double> dz1,
                                std::span<double> dz2,
                                double cap = kDiversityCap) {
  in.check();
  auto zero = [](std::span<double> s, std::size_t off, std::size_t n) {
    if (!s.empty()) std::fill(s.begin() + off, s.begin() + off + n, 0.0);
  };
  for (int b = 0; b < in.batch; ++b) {
    const std::size_t xo = static_cast<std::size_t>(b) * in.pixels;
    const std::size_t zo = static_cast<std::size_t>(b) * in.latent;
    zero(dx1, xo, in.pixels);
    zero(dx2, xo, in.pixels);
    zero(dz1, zo, in.latent);
    zero(dz2, zo, in.latent);
    const double s = in.scale[b];
    if (s <= 0.0) continue;
    const double dz = detail::mean_abs_diff(in.z1.subspan(zo, in.latent),
                                            in.z2.subspan(zo, in.latent));
    if (dz == 0.0)
      throw ValidationError("diversity_loss_grad: identical latent codes");
    const double di = detail::mean_abs_diff(in.x1.subspan(xo, in.pixels),
                                            in.x2.subspan(xo, in.pixels));
    if (di == 0.0 || s * dz / di >= cap) continue;  // clamped: zero gradient
    const double inv_b = 1.0 / in.batch;
    // d(term)/d(di) = -s*dz/di^2 ; d(di)/dx1_i = sign(x1_i-x2_i)/pixels
    const double cdi = -s * dz / (di * di) * inv_b / in.pixels;
    for (int i = 0; i < in.pixels; ++i) {
      const double d = in.x1[xo + i] - in.x2[xo + i];
      const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (!dx1.empty()) dx1[xo + i] = cdi * sg;
      if (!dx2.empty()) dx2[xo + i] = -cdi * sg;
    }
    // d(term)/d(dz) = s/di ; d(dz)/dz1_j = sign(z1_j-z2_j)/latent
    const double cdz = s / di * inv_b / in.latent;
    for (int j = 0; j < in.latent; ++j) {
      const double d = in.z1[zo + j] - in.z2[zo + j];
      const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (!dz1.empty()) dz1[zo + j] = cdz * sg;
      if (!dz2.empty()) dz2[zo + j] = -cdz * sg;
    }
  }
}

/// Mean squared error between predicted and target peak coordinates.
/// Rows are (row, col) pairs; the per-sample term is the SUM of the two
/// squared coordinate errors, averaged over the batch.
inline double aux_loss(std::span<const double> pred,
                       std::span<const double> target, int batch) {
  if (batch <= 0) throw ValidationError("aux_loss: empty batch");
  if (pred.size() != static_cast<std::size_t>(batch) * 2 ||
      target.size() != pred.size())
    throw ValidationError("aux_loss: batch mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / batch;
}

inline void aux_loss_grad(std::span<const double> pred,
                          std::span<const double> target, int batch,
                          std::span<double> d_pred) {
  if (pred.size() != static_cast<std::size_t>(batch) * 2 ||
      target.size() != pred.size() || d_pred.size() != pred.size())
    throw ValidationError("aux_loss_grad: batch mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i)
    d_pred[i] = 2.0 * (pred[i] - target[i]) / batch;
}

/// Composite per-expert objective:
///   loss_g + l_div*loss_div + l_in*loss_in + l_aux*loss_aux
inline double expert_objective(double loss_g, double loss_div, double loss_in,
                               double loss_aux, const HyperParams& hp) {
  return loss_g + hp.lambda_div * loss_div + hp.lambda_in * loss_in +
         hp.lambda_aux * loss_aux;
}

/// Utilization loss over batch-mean gate probabilities: the NEGATIVE
/// entropy +sum p*log(p+eps). Minimizing it maximizes entropy, spreading
/// load across experts. Off-simplex inputs (beyond 1e-4) are rejected.
inline double utilization_loss(std::span<const double> p_bar, double eps) {
  if (p_bar.empty()) throw ValidationError("utilization_loss: empty simplex");
  double sum = 0.0;
  for (double p : p_bar) {
    if (p < -1e-4) throw ValidationError("utilization_loss: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-4)
    throw ValidationError("utilization_loss: input off the simplex by " +
                          std::to_string(std::abs(sum - 1.0)));
  double acc = 0.0;
  for (double p : p_bar) acc += p * std::log(p + eps);
  return acc;
}

inline void utilization_loss_grad(std::span<const double> p_bar, double eps,
                                  std::span<double> d) {
  if (d.size() != p_bar.size())
    throw ValidationError("utilization_loss_grad: size mismatch");
  for (std::size_t i = 0; i < p_bar.size(); ++i)
    d[i] = std::log(p_bar[i] + eps) + p_bar[i] / (p_bar[i] + eps);
}

/// Differentiation loss over per-expert mean generated intensities:
///   -sum_{i<j} (m_i - m_j)^2
/// Always <= 0; zero only when all means coincide.
inline double differentiation_loss(std::span<const double> means) {
  if (means.size() < 2)
    throw ValidationError("differentiation_loss: needs at least 2 experts");
  double acc = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      const double d = means[i] - means[j];
      acc += d * d;
    }
  return -acc;
}

inline void differentiation_loss_grad(std::span<const double> means,
                                      std::span<double> d) {
  if (means.size() < 2)
    throw ValidationError("differentiation_loss_grad: needs at least 2 experts");
  if (d.size() != means.size())
    throw ValidationError("differentiation_loss_grad: size mismatch");
  for (std::size_t i = 0; i < means.size(); ++i) {
    double g = 0.0;
    for (std::size_t j = 0; j < means.size(); ++j)
      if (j != i) g += -2.0 * (means[i] - means[j]);
    d[i] = g;
  }
}

/// Router objective:
///   sum_i expert_losses[i] + l_util*util + l_diff*diff
inline double router_objective(std::span<const double> expert_losses,
                               double util, double diff,
                               const HyperParams& hp) {
  double acc = 0.0;
  for (double l : expert_losses) acc += l;
  return acc + hp.lambda_util * util + hp.lambda_diff * diff;
}

/// Gate-probability-weighted per-expert means:
///   means[i] = sum_b P[b,i]*F[b,i] / (sum_b P[b,i] + eps)
/// P and F are batch x n row-major. This soft weighting keeps the
/// differentiation loss differentiable w.r.t. the gate probabilities.
inline void gate_weighted_means(std::span<const double> P,
                                std::span<const double> F, int batch, int n,
                                double eps, std::span<double> means) {
  if (P.size() != static_cast<std::size_t>(batch) * n || F.size() != P.size() ||
      means.size() != static_cast<std::size_t>(n))
    throw ValidationError("gate_weighted_means: shape mismatch");
  for (int i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (int b = 0; b < batch; ++b) {
      num += P[b * n + i] * F[b * n + i];
      den += P[b * n + i];
    }
    means[i] = num / (den + eps);
  }
}

/// Backpropagates d_means onto the gate probabilities:
///   d means[i] / d P[b,i] = (F[b,i] - means[i]') / (sum_b P[b,i] + eps)
/// with means[i]' = num/(den+eps) evaluated at the same point.
inline void gate_weighted_means_grad_p(std::span<const double> P,
                                       std::span<const double> F, int batch,
                                       int n, double eps,
                                       std::span<const double> d_means,
                                       std::span<double> dP) {
  if (dP.size() != P.size() || d_means.size() != static_cast<std::size_t>(n))
    throw ValidationError("gate_weighted_means_grad_p: shape mismatch");
  std::vector<double> num(static_cast<std::size_t>(n), 0.0);
  std::vector<double> den(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int b = 0; b < batch; ++b) {
      num[i] += P[b * n + i] * F[b * n + i];
      den[i] += P[b * n + i];
    }
  }
  for (int i = 0; i < n; ++i) {
    const double d = den[i] + eps;
    const double m = num[i] / d;
    for (int b = 0; b < batch; ++b)
      dP[b * n + i] = d_means[i] * (F[b * n + i] - m) / d;
  }
}

}  // namespace losses
}  // namespace moecalo
