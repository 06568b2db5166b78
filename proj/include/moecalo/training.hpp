// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration. Per batch:
//   (a) the router gates every sample; samples are hard-assigned to the
//       argmax expert,
//   (b) each expert with a nonempty sub-batch runs one discriminator
//       update, then one generator(+aux) update on the composite expert
//       objective (adversarial + diversity + intensity + aux terms),
//   (c) the router takes one step on its own objective: the per-sample
//       generator losses weighted by the assigned expert's gate
//       probability, the utilization (negative-entropy) term on
//       batch-mean gates, and the differentiation term on gate-weighted
//       mean generated intensities. Expert parameters are frozen during
//       (c); router parameters during (a)/(b).
//
// All latent draws are keyed by (seed, step, sample key), so a sample
// sees the same noise no matter how the batch is partitioned. An expert
// update is a pure function of (expert state, its sub-batch, step); the
// public expert_step hook exposes exactly that unit, and a whole
// train_step equals independent expert steps on the hard partition plus
// one router step.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moecalo/checkpoint.hpp"
#include "moecalo/dataset.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/losses.hpp"
#include "moecalo/models.hpp"
#include "moecalo/nn/adam.hpp"
#include "moecalo/rng.hpp"
#include "moecalo/version.hpp"

namespace moecalo {

struct TrainConfig {
  int n_experts = 3;
  HyperParams hp;
  int batch_size = 128;
  int epochs = 10;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  double lr_aux = 1e-4;
  double lr_router = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  CalorimeterSpec spec = CalorimeterSpec::zn();
  ModelSizes sizes;
  double split_ratio = 0.8;

  void validate() const {
    if (n_experts < 1) throw ValidationError("train: n_experts must be >= 1");
    if (batch_size < 2) throw ValidationError("train: batch_size must be >= 2");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (lr_generator <= 0 || lr_discriminator <= 0 || lr_aux <= 0 || lr_router <= 0)
      throw ValidationError("train: learning rates must be > 0");
    hp.validate();
  }
};

/// Per-step diagnostics: every loss term, per-expert sample counts and
/// batch-mean gate probabilities.
struct StepMetrics {
  double loss_d = 0, loss_g = 0, loss_div = 0, loss_in = 0, loss_aux = 0;
  double l_util = 0, l_diff = 0, router_loss = 0;
  std::vector<int> expert_counts;
  std::vector<double> mean_gate_probs;
  std::vector<double> mean_intensity;  // gate-weighted generated intensities
  std::vector<int> assignment;         // per-sample expert id
};

/// One epoch record of the training report (JSONL).
struct EpochRecord {
  int epoch = 0;
  double loss_g = 0, loss_d = 0, loss_div = 0, loss_in = 0, loss_aux = 0;
  double l_util = 0, l_diff = 0;
  std::vector<double> util_per_expert;
  std::vector<double> mean_intensity_per_expert;

  nlohmann::json to_json() const {
    return nlohmann::json{{"format_version", kFormatVersion},
                          {"epoch", epoch},
                          {"loss_g", loss_g},
                          {"loss_d", loss_d},
                          {"loss_div", loss_div},
                          {"loss_in", loss_in},
                          {"loss_aux", loss_aux},
                          {"l_util", l_util},
                          {"l_diff", l_diff},
                          {"util_per_expert", util_per_expert},
                          {"mean_intensity_per_expert", mean_intensity_per_expert}};
  }
};

/// Owns the bundle, optimizers and preprocessed training data.
/// Not movable: optimizers hold pointers into the bundle's tensors.
class TrainState {
 public:
  struct ExpertStepStats {
    double loss_d = 0, loss_g = 0, loss_div = 0, loss_in = 0, loss_aux = 0;
    std::vector<double> sample_loss_g;  // per sub-batch row, generator term
  };

  TrainState(Dataset train_data, const TrainConfig& cfg)
      : cfg_(cfg), data_(std::move(train_data)) {
    cfg_.validate();
    if (data_.size() < 2) throw ValidationError("train: need at least 2 samples");
    validate_dataset(data_);
    tables_ = build_preprocess_tables(data_);
    bundle_ = std::make_unique<ModelBundle>(cfg.spec, cfg.sizes, cfg.hp,
                                            cfg.n_experts, cfg.seed);
    bundle_->standardizer = Standardizer::fit(data_.conditions);
    bundle_->transform = ValueTransform::fit(data_.responses);
    bundle_->init_params();

    for (int i = 0; i < cfg.n_experts; ++i) {
      auto& e = bundle_->experts[static_cast<std::size_t>(i)];
      opt_g_.emplace_back(e.gen.params(), e.gen.grads(), cfg.lr_generator,
                          cfg.beta1, cfg.beta2);
      opt_d_.emplace_back(e.disc.params(), e.disc.grads(), cfg.lr_discriminator,
                          cfg.beta1, cfg.beta2);
      opt_aux_.emplace_back(e.aux.params(), e.aux.grads(), cfg.lr_aux,
                            cfg.beta1, cfg.beta2);
    }
    opt_router_.emplace(bundle_->router.params(), bundle_->router.grads(),
                        cfg.lr_router, cfg.beta1, cfg.beta2);

    // Pre-transform every training response once.
    transformed_.resize(data_.responses.size());
    bundle_->transform.forward_grid(data_.responses, transformed_);
    cond_std_.resize(data_.size() * kCondDim);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto a = bundle_->standardizer.apply(data_.conditions[i]);
      std::copy(a.begin(), a.end(),
                cond_std_.begin() + static_cast<std::ptrdiff_t>(i * kCondDim));
    }
  }

  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  /// Runs one full optimization step on the given training-set rows.
  StepMetrics train_step(std::span<const int> rows);

  /// Runs just the discriminator + generator(+aux) update of one expert
  /// on the given rows, exactly as train_step would for that expert's
  /// sub-batch. Uses the current step counter and does not advance it.
  ExpertStepStats expert_step(int expert_id, std::span<const int> rows) {
    return run_expert_update(expert_id, rows);
  }

  /// Advances the step counter (handy after composing expert_step calls).
  void advance_step() { ++step_; }

  ModelBundle& bundle() { return *bundle_; }
  const Dataset& data() const { return data_; }
  const PreprocessTables& tables() const { return tables_; }
  const TrainConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  /// Test hook: skip the router update (phase c) entirely.
  void freeze_router(bool f) { freeze_router_ = f; }

 private:
  ExpertStepStats run_expert_update(int e, std::span<const int> rows);
  Tensor<float> gather_cond(std::span<const int> rows) const;
  Tensor<float> draw_noise(std::span<const int> rows, int purpose) const;
  void check_finite(double v, const char* term) const;

  TrainConfig cfg_;
  Dataset data_;
  PreprocessTables tables_;
  std::vector<float> transformed_;  // N*P, [-1,1] space
  std::vector<float> cond_std_;     // N*9
  std::unique_ptr<ModelBundle> bundle_;
  std::vector<nn::Adam<float>> opt_g_, opt_d_, opt_aux_;
  std::optional<nn::Adam<float>> opt_router_;
  long step_ = 0;
  bool freeze_router_ = false;
};

inline Tensor<float> TrainState::gather_cond(std::span<const int> rows) const {
  Tensor<float> c({static_cast<std::int64_t>(rows.size()), kCondDim});
  for (std::size_t b = 0; b < rows.size(); ++b)
    std::copy_n(cond_std_.data() + static_cast<std::size_t>(rows[b]) * kCondDim,
                kCondDim, c.data() + b * kCondDim);
  return c;
}

inline Tensor<float> TrainState::draw_noise(std::span<const int> rows,
                                            int purpose) const {
  const int k = cfg_.sizes.latent_dim;
  Tensor<float> z({static_cast<std::int64_t>(rows.size()), k});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    auto rng = Rng::keyed(cfg_.seed, Stream::Noise,
                          {static_cast<std::uint64_t>(step_),
                           static_cast<std::uint64_t>(rows[b]),
                           static_cast<std::uint64_t>(purpose)});
    for (int j = 0; j < k; ++j)
      z(static_cast<std::int64_t>(b), j) = static_cast<float>(rng.normal());
  }
  return z;
}

inline void TrainState::check_finite(double v, const char* term) const {
  if (!std::isfinite(v))
    throw TrainingError(std::string("non-finite loss in term ") + term +
                        " at step " + std::to_string(step_));
}

inline TrainState::ExpertStepStats TrainState::run_expert_update(
    int e, std::span<const int> rows) {
  const int Be = static_cast<int>(rows.size());
  const int P = cfg_.spec.pixels();
  const int H = cfg_.spec.height, W = cfg_.spec.width;
  ExpertStepStats st;
  if (Be == 0) return st;

  Tensor<float> cond = gather_cond(rows);
  Tensor<float> real({Be, 1, H, W});
  std::vector<double> f_real(static_cast<std::size_t>(Be));
  std::vector<double> scale(static_cast<std::size_t>(Be));
  std::vector<double> peaks(static_cast<std::size_t>(Be) * 2);
  for (int i = 0; i < Be; ++i) {
    const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]);
    std::copy_n(transformed_.data() + row * static_cast<std::size_t>(P), P,
                real.data() + static_cast<std::size_t>(i) * P);
    f_real[static_cast<std::size_t>(i)] = tables_.intensity[row];
    scale[static_cast<std::size_t>(i)] = tables_.diversity_scale[row];
    peaks[static_cast<std::size_t>(i) * 2] = tables_.peak_row[row];
    peaks[static_cast<std::size_t>(i) * 2 + 1] = tables_.peak_col[row];
  }

  auto& expert = bundle_->experts[static_cast<std::size_t>(e)];

  // -- discriminator update --
  {
    Tensor<float> zd = draw_noise(rows, 0);
    Tensor<float> fake = expert.gen.forward(zd, cond, false);
    // One cached forward over the concatenated real+fake batch.
    Tensor<float> both({2 * Be, 1, H, W});
    std::copy_n(real.data(), static_cast<std::size_t>(Be) * P, both.data());
    std::copy_n(fake.data(), static_cast<std::size_t>(Be) * P,
                both.data() + static_cast<std::size_t>(Be) * P);
    Tensor<float> cond2({2 * Be, kCondDim});
    std::copy_n(cond.data(), static_cast<std::size_t>(Be) * kCondDim, cond2.data());
    std::copy_n(cond.data(), static_cast<std::size_t>(Be) * kCondDim,
                cond2.data() + static_cast<std::size_t>(Be) * kCondDim);
    Tensor<float> logits = expert.disc.forward_logits(both, cond2, true);

    std::vector<double> s_real(static_cast<std::size_t>(Be)),
        s_fake(static_cast<std::size_t>(Be));
    Tensor<float> dlogits({2 * Be});
    for (int i = 0; i < Be; ++i) {
      const double sr = 1.0 / (1.0 + std::exp(-static_cast<double>(logits(i))));
      const double sf = 1.0 / (1.0 + std::exp(-static_cast<double>(logits(Be + i))));
      s_real[static_cast<std::size_t>(i)] = sr;
      s_fake[static_cast<std::size_t>(i)] = sf;
      // d loss_d / d logit, stable through the sigmoid
      dlogits(i) = static_cast<float>((sr - 1.0) / Be);
      dlogits(Be + i) = static_cast<float>(sf / Be);
    }
    const auto adv = losses::adversarial_losses(s_real, s_fake);
    check_finite(adv.loss_d, "loss_d");
    st.loss_d = adv.loss_d;
    expert.disc.backward(dlogits, true);
    opt_d_[static_cast<std::size_t>(e)].step();
    opt_d_[static_cast<std::size_t>(e)].zero_grads();
  }

  // -- generator (+aux) update --
  {
    Tensor<float> z1 = draw_noise(rows, 1);
    Tensor<float> z2 = draw_noise(rows, 2);
    Tensor<float> x1 = expert.gen.forward(z1, cond, false);
    Tensor<float> x2 = expert.gen.forward(z2, cond, true);  // cached

    // Adversarial part (through the freshly updated discriminator).
    Tensor<float> logits_f = expert.disc.forward_logits(x1, cond, true);
    Tensor<float> dlog({Be});
    st.sample_loss_g.resize(static_cast<std::size_t>(Be));
    double lg_sum = 0.0;
    for (int i = 0; i < Be; ++i) {
      const double sf = 1.0 / (1.0 + std::exp(-static_cast<double>(logits_f(i))));
      const double lg = -std::log(losses::clamp_score(sf));
      st.sample_loss_g[static_cast<std::size_t>(i)] = lg;
      lg_sum += lg;
      dlog(i) = static_cast<float>((sf - 1.0) / Be);
    }
    st.loss_g = lg_sum / Be;
    check_finite(st.loss_g, "loss_g");
    Tensor<float> dx_adv = expert.disc.backward(dlog, false);  // D frozen here

    // Diversity part (in transformed space).
    std::vector<double> x1d(x1.v.begin(), x1.v.end());
    std::vector<double> x2d(x2.v.begin(), x2.v.end());
    std::vector<double> z1d(z1.v.begin(), z1.v.end());
    std::vector<double> z2d(z2.v.begin(), z2.v.end());
    losses::DiversityBatch db{scale, x1d, x2d, z1d, z2d, Be, P,
                              cfg_.sizes.latent_dim};
    st.loss_div = losses::diversity_loss(db);
    check_finite(st.loss_div, "loss_div");
    std::vector<double> ddx1(x1d.size()), ddx2(x2d.size());
    losses::diversity_loss_grad(db, ddx1, ddx2, {}, {});

    // Intensity part (count space via the inverse transform).
    std::vector<double> f_gen(static_cast<std::size_t>(Be), 0.0);
    for (int i = 0; i < Be; ++i) {
      double s = 0.0;
      for (int j = 0; j < P; ++j)
        s += bundle_->transform.inverse(x1(static_cast<std::int64_t>(i) * P + j));
      f_gen[static_cast<std::size_t>(i)] = s;
    }
    double loss_in = 0.0;
    for (int i = 0; i < Be; ++i)
      loss_in += std::abs(f_real[static_cast<std::size_t>(i)] -
                          f_gen[static_cast<std::size_t>(i)]);
    st.loss_in = loss_in / Be;
    check_finite(st.loss_in, "loss_in");

    // Aux part: predictions on generated images against the matched real
    // peak coordinates; the aux network stays frozen on this path.
    Tensor<float> pred_gen = expert.aux.forward(x1, true);
    std::vector<double> pred_d(pred_gen.v.begin(), pred_gen.v.end());
    st.loss_aux = losses::aux_loss(pred_d, peaks, Be);
    check_finite(st.loss_aux, "loss_aux");
    std::vector<double> dpred(pred_d.size());
    losses::aux_loss_grad(pred_d, peaks, Be, dpred);
    Tensor<float> dpred_f({Be, 2});
    for (std::size_t i = 0; i < dpred.size(); ++i)
      dpred_f.v[i] = static_cast<float>(dpred[i] * cfg_.hp.lambda_aux);
    Tensor<float> dx_auxpath = expert.aux.backward(dpred_f, false);

    // Total gradient w.r.t. x1 and x2.
    Tensor<float> dx1({Be, 1, H, W}), dx2({Be, 1, H, W});
    for (int i = 0; i < Be; ++i) {
      const double gap = f_real[static_cast<std::size_t>(i)] -
                         f_gen[static_cast<std::size_t>(i)];
      const double sg = gap > 0 ? 1.0 : (gap < 0 ? -1.0 : 0.0);
      for (int j = 0; j < P; ++j) {
        const std::size_t idx =
            static_cast<std::size_t>(i) * P + static_cast<std::size_t>(j);
        const double d_in = -sg / Be * bundle_->transform.inverse_deriv(x1.v[idx]);
        dx1.v[idx] = dx_adv.v[idx] +
                     static_cast<float>(cfg_.hp.lambda_div * ddx1[idx] +
                                        cfg_.hp.lambda_in * d_in) +
                     dx_auxpath.v[idx];
        dx2.v[idx] = static_cast<float>(cfg_.hp.lambda_div * ddx2[idx]);
      }
    }

    expert.gen.backward(dx2, true);         // consumes the x2 caches
    expert.gen.forward(z1, cond, true);     // recompute x1 caches
    expert.gen.backward(dx1, true);
    opt_g_[static_cast<std::size_t>(e)].step();
    opt_g_[static_cast<std::size_t>(e)].zero_grads();

    // -- aux update on real images --
    Tensor<float> pred_real = expert.aux.forward(real, true);
    std::vector<double> pred_rd(pred_real.v.begin(), pred_real.v.end());
    std::vector<double> dpred_r(pred_rd.size());
    losses::aux_loss_grad(pred_rd, peaks, Be, dpred_r);
    Tensor<float> dpred_rf({Be, 2});
    for (std::size_t i = 0; i < dpred_r.size(); ++i)
      dpred_rf.v[i] = static_cast<float>(dpred_r[i]);
    expert.aux.backward(dpred_rf, true);
    opt_aux_[static_cast<std::size_t>(e)].step();
    opt_aux_[static_cast<std::size_t>(e)].zero_grads();
  }
  return st;
}

inline StepMetrics TrainState::train_step(std::span<const int> rows) {
  const int B = static_cast<int>(rows.size());
  if (B < 2) throw ValidationError("train_step: batch size must be >= 2");
  const int N = cfg_.n_experts;
  const int P = cfg_.spec.pixels();

  StepMetrics m;
  m.expert_counts.assign(static_cast<std::size_t>(N), 0);
  m.mean_gate_probs.assign(static_cast<std::size_t>(N), 0.0);
  m.mean_intensity.assign(static_cast<std::size_t>(N), 0.0);
  m.assignment.resize(static_cast<std::size_t>(B));

  Tensor<float> cond_all = gather_cond(rows);

  // ---- (a) route and hard-assign --------------------------------------
  Tensor<float> probs_a = bundle_->router.forward_probs(cond_all, false);
  for (int b = 0; b < B; ++b) {
    int best = 0;
    for (int i = 1; i < N; ++i)
      if (probs_a(b, i) > probs_a(b, best)) best = i;
    m.assignment[static_cast<std::size_t>(b)] = best;
    ++m.expert_counts[static_cast<std::size_t>(best)];
    for (int i = 0; i < N; ++i)
      m.mean_gate_probs[static_cast<std::size_t>(i)] += probs_a(b, i) / B;
  }

  // ---- (b) expert updates on hard sub-batches -------------------------
  std::vector<double> sample_loss_g(static_cast<std::size_t>(B), 0.0);
  for (int e = 0; e < N; ++e) {
    std::vector<int> positions;
    std::vector<int> sub_rows;
    for (int b = 0; b < B; ++b) {
      if (m.assignment[static_cast<std::size_t>(b)] == e) {
        positions.push_back(b);
        sub_rows.push_back(rows[static_cast<std::size_t>(b)]);
      }
    }
    if (sub_rows.empty()) continue;  // empty sub-batch: expert skips the step
    const auto st = run_expert_update(e, sub_rows);
    const auto Be = static_cast<double>(sub_rows.size());
    m.loss_d += st.loss_d * Be / B;
    m.loss_g += st.loss_g * Be / B;
    m.loss_div += st.loss_div * Be / B;
    m.loss_in += st.loss_in * Be / B;
    m.loss_aux += st.loss_aux * Be / B;
    for (std::size_t i = 0; i < positions.size(); ++i)
      sample_loss_g[static_cast<std::size_t>(positions[i])] = st.sample_loss_g[i];
  }

  // ---- (c) router update ----------------------------------------------
  if (N >= 2 && !freeze_router_) {
    Tensor<float> probs = bundle_->router.forward_probs(cond_all, true);
    std::vector<double> P_mat(static_cast<std::size_t>(B) * N);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < N; ++i)
        P_mat[static_cast<std::size_t>(b) * N + i] = probs(b, i);

    // One generated image per (sample, expert), experts frozen.
    std::vector<double> F_mat(static_cast<std::size_t>(B) * N, 0.0);
    for (int i = 0; i < N; ++i) {
      Tensor<float> zi = draw_noise(rows, 3 + i);
      Tensor<float> xi =
          bundle_->experts[static_cast<std::size_t>(i)].gen.forward(zi, cond_all, false);
      for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (int j = 0; j < P; ++j)
          s += bundle_->transform.inverse(xi(static_cast<std::int64_t>(b) * P + j));
        F_mat[static_cast<std::size_t>(b) * N + i] = s;
      }
    }

    std::vector<double> p_bar(static_cast<std::size_t>(N), 0.0);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < N; ++i)
        p_bar[static_cast<std::size_t>(i)] += P_mat[static_cast<std::size_t>(b) * N + i] / B;
    const double l_util = losses::utilization_loss(p_bar, cfg_.hp.epsilon);
    check_finite(l_util, "l_util");

    std::vector<double> means(static_cast<std::size_t>(N));
    losses::gate_weighted_means(P_mat, F_mat, B, N, cfg_.hp.epsilon, means);
    const double l_diff = losses::differentiation_loss(means);
    check_finite(l_diff, "l_diff");
    m.mean_intensity.assign(means.begin(), means.end());

    // Per-expert adversarial terms: gate-weighted per-sample generator
    // losses of the assigned expert, normalized by the full batch.
    std::vector<double> expert_terms(static_cast<std::size_t>(N), 0.0);
    for (int b = 0; b < B; ++b) {
      const int a = m.assignment[static_cast<std::size_t>(b)];
      expert_terms[static_cast<std::size_t>(a)] +=
          P_mat[static_cast<std::size_t>(b) * N + a] *
          sample_loss_g[static_cast<std::size_t>(b)] / B;
    }
    m.router_loss = losses::router_objective(expert_terms, l_util, l_diff, cfg_.hp);
    check_finite(m.router_loss, "router_loss");
    m.l_util = l_util;
    m.l_diff = l_diff;

    // Gradient w.r.t. the gate probabilities.
    std::vector<double> d_util(static_cast<std::size_t>(N));
    losses::utilization_loss_grad(p_bar, cfg_.hp.epsilon, d_util);
    std::vector<double> d_means(static_cast<std::size_t>(N));
    losses::differentiation_loss_grad(means, d_means);
    for (auto& d : d_means) d *= cfg_.hp.lambda_diff;
    std::vector<double> dP(static_cast<std::size_t>(B) * N, 0.0);
    losses::gate_weighted_means_grad_p(P_mat, F_mat, B, N, cfg_.hp.epsilon,
                                       d_means, dP);
    for (int b = 0; b < B; ++b) {
      const int a = m.assignment[static_cast<std::size_t>(b)];
      dP[static_cast<std::size_t>(b) * N + a] +=
          sample_loss_g[static_cast<std::size_t>(b)] / B;
      for (int i = 0; i < N; ++i)
        dP[static_cast<std::size_t>(b) * N + i] +=
            cfg_.hp.lambda_util * d_util[static_cast<std::size_t>(i)] / B;
    }
    Tensor<float> dP_f({B, N});
    for (std::size_t i = 0; i < dP.size(); ++i)
      dP_f.v[i] = static_cast<float>(dP[i]);
    bundle_->router.backward(dP_f, true);
    opt_router_->step();
    opt_router_->zero_grads();
  } else if (N >= 2) {
    // Frozen router: still report the utilization diagnostics.
    std::vector<double> p_bar(static_cast<std::size_t>(N), 0.0);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < N; ++i)
        p_bar[static_cast<std::size_t>(i)] += probs_a(b, i) / B;
    m.l_util = losses::utilization_loss(p_bar, cfg_.hp.epsilon);
  }

  ++step_;
  return m;
}

// ---------------------------------------------------------------------
// Full training driver
// ---------------------------------------------------------------------

struct TrainResult {
  std::vector<EpochRecord> report;
  std::string checkpoint_path;
};

/// Trains on the training split of `data` (tables and normalizers fitted
/// on that split only), writing a checkpoint and one JSONL report record
/// per epoch when out_dir is nonempty.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const std::string& out_dir = "") {
  cfg.validate();
  validate_dataset(data);
  if (!(data.spec == cfg.spec))
    throw ValidationError("train: dataset detector does not match config");

  SplitIndex si = split(static_cast<int>(data.size()), cfg.split_ratio, cfg.seed);
  Dataset train_data = data.subset(si.train_ids);

  auto state = std::make_unique<TrainState>(std::move(train_data), cfg);
  state->bundle().split_n = static_cast<std::int64_t>(data.size());
  state->bundle().split_ratio = cfg.split_ratio;
  state->bundle().split_seed = cfg.seed;

  std::string ckpt_path;
  std::ofstream report_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    ckpt_path = out_dir + "/checkpoint.h5";
    // Fail before training if the checkpoint path is unwritable.
    save_checkpoint(ckpt_path, state->bundle());
    report_file.open(out_dir + "/report.jsonl", std::ios::trunc);
    if (!report_file)
      throw TrainingError("cannot open report file in " + out_dir);
  }

  const int n = static_cast<int>(state->data().size());
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = Rng::keyed(cfg.seed, Stream::Shuffle,
                                  {static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.util_per_expert.assign(static_cast<std::size_t>(cfg.n_experts), 0.0);
    rec.mean_intensity_per_expert.assign(static_cast<std::size_t>(cfg.n_experts), 0.0);
    long seen = 0;
    int steps = 0;

    for (int start = 0; start + 2 <= n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      if (len < 2) break;
      auto metrics = state->train_step(
          std::span<const int>(order.data() + start, static_cast<std::size_t>(len)));
      rec.loss_g += metrics.loss_g;
      rec.loss_d += metrics.loss_d;
      rec.loss_div += metrics.loss_div;
      rec.loss_in += metrics.loss_in;
      rec.loss_aux += metrics.loss_aux;
      rec.l_util += metrics.l_util;
      rec.l_diff += metrics.l_diff;
      for (int i = 0; i < cfg.n_experts; ++i) {
        rec.util_per_expert[static_cast<std::size_t>(i)] +=
            metrics.expert_counts[static_cast<std::size_t>(i)];
        if (!metrics.mean_intensity.empty())
          rec.mean_intensity_per_expert[static_cast<std::size_t>(i)] +=
              metrics.mean_intensity[static_cast<std::size_t>(i)];
      }
      seen += len;
      ++steps;
    }
    const double inv_steps = steps > 0 ? 1.0 / steps : 0.0;
    rec.loss_g *= inv_steps;
    rec.loss_d *= inv_steps;
    rec.loss_div *= inv_steps;
    rec.loss_in *= inv_steps;
    rec.loss_aux *= inv_steps;
    rec.l_util *= inv_steps;
    rec.l_diff *= inv_steps;
    for (int i = 0; i < cfg.n_experts; ++i) {
      rec.util_per_expert[static_cast<std::size_t>(i)] /= std::max<long>(seen, 1);
      rec.mean_intensity_per_expert[static_cast<std::size_t>(i)] *= inv_steps;
    }

    state->bundle().epoch = epoch + 1;
    if (!out_dir.empty()) {
      save_checkpoint(ckpt_path, state->bundle());
      report_file << rec.to_json().dump() << "\n";
      report_file.flush();
    }
    result.report.push_back(std::move(rec));
  }
  result.checkpoint_path = ckpt_path;
  return result;
}

// ---------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------

struct GenerationTrace {
  std::vector<int> expert_ids;
};

/// Routes each condition, samples latent noise keyed by (seed, index),
/// generates with the assigned expert and returns count-space responses.
inline std::vector<float> generate_responses(
    ModelBundle& bundle, std::span<const ParticleConditions> conditions,
    std::uint64_t seed, GenerationTrace* trace = nullptr,
    double* router_seconds = nullptr) {
  const int P = bundle.spec.pixels();
  const int n = static_cast<int>(conditions.size());
  const int N = bundle.n_experts;
  std::vector<float> out(static_cast<std::size_t>(n) * P, 0.0f);

  // Route everything first (batched).
  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kChunk = 1024;
  for (int start = 0; start < n; start += kChunk) {
    const int len = std::min(kChunk, n - start);
    Tensor<float> cond_buf({len, kCondDim});
    for (int i = 0; i < len; ++i) {
      const auto a =
          bundle.standardizer.apply(conditions[static_cast<std::size_t>(start + i)]);
      std::copy(a.begin(), a.end(),
                cond_buf.data() + static_cast<std::size_t>(i) * kCondDim);
    }
    Tensor<float> probs = bundle.router.forward_probs(cond_buf, false);
    for (int i = 0; i < len; ++i) {
      int best = 0;
      for (int j = 1; j < N; ++j)
        if (probs(i, j) > probs(i, best)) best = j;
      assignment[static_cast<std::size_t>(start + i)] = best;
    }
  }
  if (router_seconds)
    *router_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (trace) trace->expert_ids = assignment;

  // Generate per expert in chunks.
  for (int e = 0; e < N; ++e) {
    std::vector<int> idxs;
    for (int i = 0; i < n; ++i)
      if (assignment[static_cast<std::size_t>(i)] == e) idxs.push_back(i);
    for (std::size_t start = 0; start < idxs.size(); start += kChunk) {
      const int len =
          static_cast<int>(std::min<std::size_t>(kChunk, idxs.size() - start));
      Tensor<float> z({len, bundle.sizes.latent_dim});
      Tensor<float> c({len, kCondDim});
      for (int i = 0; i < len; ++i) {
        const int gi = idxs[start + static_cast<std::size_t>(i)];
        auto rng = Rng::keyed(seed, Stream::Eval, {static_cast<std::uint64_t>(gi)});
        for (int j = 0; j < bundle.sizes.latent_dim; ++j)
          z(i, j) = static_cast<float>(rng.normal());
        const auto a = bundle.standardizer.apply(conditions[static_cast<std::size_t>(gi)]);
        std::copy(a.begin(), a.end(), c.data() + static_cast<std::size_t>(i) * kCondDim);
      }
      Tensor<float> img =
          bundle.experts[static_cast<std::size_t>(e)].gen.forward(z, c, false);
      for (int i = 0; i < len; ++i) {
        const int gi = idxs[start + static_cast<std::size_t>(i)];
        bundle.transform.inverse_grid(
            std::span<const float>(img.data() + static_cast<std::size_t>(i) * P,
                                   static_cast<std::size_t>(P)),
            std::span<float>(out.data() + static_cast<std::size_t>(gi) * P,
                             static_cast<std::size_t>(P)));
      }
    }
  }
  return out;
}

}  // namespace moecalo
