// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// The four trainable networks. Per expert: Generator (latent+conditioning
// -> image in [-1,1]), Discriminator (image+conditioning -> realness
// logit/score), AuxRegressor (image -> predicted peak coordinates). Shared
// across experts: Router (conditioning -> gate probabilities).
//
// Deconvolution stacks work on power-of-two enlargements of a small seed
// map and the result is center-cropped to the exact detector resolution;
// outputs are never resampled.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/nn/layers.hpp"
#include "moecalo/rng.hpp"
#include "moecalo/tensor.hpp"

namespace moecalo {

/// Channel widths and depths; everything here is a config value.
struct ModelSizes {
  int latent_dim = 10;
  int gen_channels = 32;   // channels entering the generator's final conv
  int disc_channels = 32;  // channels after the discriminator's first block
  int aux_channels = 16;   // channels after the aux regressor's first block
  int router_hidden = 64;

  /// Reduced preset used for desk-scale runs on the T16 profile.
  static ModelSizes reduced() { return {10, 8, 8, 8, 16}; }
};

/// Seed-map geometry for the deconvolution stack: smallest stage count
/// whose seed map is at most 7x7 (e.g. 44x44 -> 6x6 over 3 stages,
/// 56x30 -> 7x4 over 3 stages, 16x16 -> 4x4 over 2 stages).
struct SeedGeometry {
  int stages = 2;
  int h0 = 4, w0 = 4;      // seed map dims
  int h_big = 16, w_big = 16;  // dims before cropping

  static SeedGeometry for_spec(const CalorimeterSpec& spec) {
    SeedGeometry g;
    for (int s = 1; s <= 6; ++s) {
      const int h0 = (spec.height + (1 << s) - 1) >> s;
      const int w0 = (spec.width + (1 << s) - 1) >> s;
      if (h0 <= 7 && w0 <= 7) {
        g.stages = s;
        g.h0 = h0;
        g.w0 = w0;
        g.h_big = h0 << s;
        g.w_big = w0 << s;
        return g;
      }
    }
    throw ValidationError("seed geometry: resolution too large");
  }
};

namespace detail {

/// Center-crops (B,C,Hb,Wb) to (B,C,H,W).
template <typename T>
Tensor<T> crop_center(const Tensor<T>& x, int h, int w) {
  const std::int64_t batch = x.dim(0), ch = x.dim(1);
  const int hb = static_cast<int>(x.dim(2)), wb = static_cast<int>(x.dim(3));
  const int oy = (hb - h) / 2, ox = (wb - w) / 2;
  Tensor<T> y({batch, ch, h, w});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < ch; ++c)
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc)
          y(b, c, r, cc) = x(b, c, r + oy, cc + ox);
  return y;
}

/// Adjoint of crop_center: zero-pads gradients back to (B,C,Hb,Wb).
template <typename T>
Tensor<T> uncrop_center(const Tensor<T>& dy, int hb, int wb) {
  const std::int64_t batch = dy.dim(0), ch = dy.dim(1);
  const int h = static_cast<int>(dy.dim(2)), w = static_cast<int>(dy.dim(3));
  const int oy = (hb - h) / 2, ox = (wb - w) / 2;
  Tensor<T> dx({batch, ch, hb, wb});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < ch; ++c)
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc)
          dx(b, c, r + oy, cc + ox) = dy(b, c, r, cc);
  return dx;
}

}  // namespace detail

// ---------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------

template <typename T>
class Generator {
 public:
  Generator(const CalorimeterSpec& spec, const ModelSizes& sizes)
      : spec_(spec), sizes_(sizes), geom_(SeedGeometry::for_spec(spec)),
        seed_channels_(sizes.gen_channels << geom_.stages),
        dense_(sizes.latent_dim + kCondDim,
               seed_channels_ * geom_.h0 * geom_.w0) {
    int c = seed_channels_;
    trunk_.template add<nn::InstanceNorm2d<T>>(c);
    trunk_.template add<nn::ReLU<T>>();
    for (int s = 0; s < geom_.stages; ++s) {
      trunk_.template add<nn::ConvTranspose2d<T>>(c, c / 2, 4, 2, 1);
      trunk_.template add<nn::InstanceNorm2d<T>>(c / 2);
      trunk_.template add<nn::ReLU<T>>();
      c /= 2;
    }
    trunk_.template add<nn::Conv2d<T>>(c, 1, 3, 1, 1);
    trunk_.template add<nn::Tanh<T>>();
  }

  void init(Rng& rng) {
    dense_.init(rng);
    trunk_.init(rng);
  }

  /// (B,k) latent + (B,9) standardized conditioning -> (B,1,H,W) in [-1,1].
  Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& cond, bool cache) {
    if (z.dim(1) != sizes_.latent_dim)
      throw ValidationError("generator: latent size " + std::to_string(z.dim(1)) +
                            " does not match latent_dim " +
                            std::to_string(sizes_.latent_dim));
    if (cond.dim(1) != kCondDim)
      throw ValidationError("generator: conditioning must have 9 fields");
    const std::int64_t batch = z.dim(0);
    Tensor<T> in({batch, sizes_.latent_dim + kCondDim});
    for (std::int64_t b = 0; b < batch; ++b) {
      for (int j = 0; j < sizes_.latent_dim; ++j) in(b, j) = z(b, j);
      for (int j = 0; j < kCondDim; ++j) in(b, sizes_.latent_dim + j) = cond(b, j);
    }
    Tensor<T> h = dense_.forward(in, cache);
    h.reshape({batch, seed_channels_, geom_.h0, geom_.w0});
    Tensor<T> big = trunk_.forward(std::move(h), cache);
    return detail::crop_center(big, spec_.height, spec_.width);
  }

  /// Backward through the crop and the whole stack; input gradients are
  /// discarded (latent/conditioning are not trained through the image).
  void backward(const Tensor<T>& d_img, bool accum = true) {
    Tensor<T> dy = detail::uncrop_center(d_img, geom_.h_big, geom_.w_big);
    Tensor<T> dh = trunk_.backward(std::move(dy), accum);
    dh.reshape({d_img.dim(0), static_cast<std::int64_t>(seed_channels_) *
                                  geom_.h0 * geom_.w0});
    dense_.backward(dh, accum);
  }

  std::vector<Tensor<T>*> params() {
    auto out = trunk_.params();
    out.push_back(&dense_.weight);
    out.push_back(&dense_.bias);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    auto out = trunk_.grads();
    out.push_back(&dense_.d_weight);
    out.push_back(&dense_.d_bias);
    return out;
  }

  const CalorimeterSpec& spec() const { return spec_; }
  int latent_dim() const { return sizes_.latent_dim; }

 private:
  CalorimeterSpec spec_;
  ModelSizes sizes_;
  SeedGeometry geom_;
  int seed_channels_;
  nn::Dense<T> dense_;
  nn::Sequential<T> trunk_;
};

// ---------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------

template <typename T>
class Discriminator {
 public:
  Discriminator(const CalorimeterSpec& spec, const ModelSizes& sizes)
      : spec_(spec), sizes_(sizes) {
    const int stages = SeedGeometry::for_spec(spec).stages;
    int c = 1 + kCondDim;
    int h = spec.height, w = spec.width;
    int width = sizes.disc_channels;
    for (int s = 0; s < stages; ++s) {
      trunk_.template add<nn::Conv2d<T>>(c, width, 4, 2, 1);
      trunk_.template add<nn::LeakyReLU<T>>(static_cast<T>(0.2));
      c = width;
      width *= 2;
      h = (h + 2 - 4) / 2 + 1;
      w = (w + 2 - 4) / 2 + 1;
    }
    flat_dim_ = c * h * w;
    head_ = std::make_unique<nn::Dense<T>>(flat_dim_, 1);
  }

  void init(Rng& rng) {
    trunk_.init(rng);
    head_->init(rng);
  }

  /// Returns raw logits (B). The conditioning vector is broadcast over the
  /// spatial extent and concatenated as extra input channels.
  Tensor<T> forward_logits(const Tensor<T>& x, const Tensor<T>& cond, bool cache) {
    if (x.dim(2) != spec_.height || x.dim(3) != spec_.width)
      throw ValidationError("discriminator: image shape mismatch");
    const std::int64_t batch = x.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(spec_.height) * spec_.width;
    Tensor<T> in({batch, 1 + kCondDim, spec_.height, spec_.width});
    for (std::int64_t b = 0; b < batch; ++b) {
      std::copy_n(x.data() + b * hw, hw, in.data() + b * (1 + kCondDim) * hw);
      for (int j = 0; j < kCondDim; ++j) {
        T* dst = in.data() + (b * (1 + kCondDim) + 1 + j) * hw;
        std::fill_n(dst, hw, cond(b, j));
      }
    }
    Tensor<T> h = trunk_.forward(std::move(in), cache);
    h.reshape({batch, flat_dim_});
    Tensor<T> logits = head_->forward(h, cache);
    logits.reshape({batch});
    return logits;
  }

  /// Sigmoid scores in (0,1).
  Tensor<T> score(const Tensor<T>& x, const Tensor<T>& cond) {
    Tensor<T> s = forward_logits(x, cond, false);
    for (auto& v : s.v) v = T(1) / (T(1) + std::exp(-v));
    return s;
  }

  /// Backward from d/dlogits; returns gradient w.r.t. the IMAGE channel.
  Tensor<T> backward(const Tensor<T>& d_logits, bool accum = true) {
    const std::int64_t batch = d_logits.dim(0);
    Tensor<T> dl = d_logits;
    dl.reshape({batch, 1});
    Tensor<T> dh = head_->backward(dl, accum);
    Tensor<T> din = trunk_.backward(std::move(dh), accum);
    const std::int64_t hw = static_cast<std::int64_t>(spec_.height) * spec_.width;
    Tensor<T> dx({batch, 1, spec_.height, spec_.width});
    for (std::int64_t b = 0; b < batch; ++b)
      std::copy_n(din.data() + b * (1 + kCondDim) * hw, hw, dx.data() + b * hw);
    return dx;
  }

  std::vector<Tensor<T>*> params() {
    auto out = trunk_.params();
    out.push_back(&head_->weight);
    out.push_back(&head_->bias);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    auto out = trunk_.grads();
    out.push_back(&head_->d_weight);
    out.push_back(&head_->d_bias);
    return out;
  }

 private:
  CalorimeterSpec spec_;
  ModelSizes sizes_;
  std::int64_t flat_dim_ = 0;
  nn::Sequential<T> trunk_;
  std::unique_ptr<nn::Dense<T>> head_;
};

// ---------------------------------------------------------------------
// Auxiliary regressor
// ---------------------------------------------------------------------

template <typename T>
class AuxRegressor {
 public:
  AuxRegressor(const CalorimeterSpec& spec, const ModelSizes& sizes)
      : spec_(spec) {
    int c = 1, h = spec.height, w = spec.width;
    int width = sizes.aux_channels;
    for (int s = 0; s < 3; ++s) {
      trunk_.template add<nn::Conv2d<T>>(c, width, 3, 2, 1);
      trunk_.template add<nn::ReLU<T>>();
      c = width;
      width *= 2;
      h = (h + 2 - 3) / 2 + 1;
      w = (w + 2 - 3) / 2 + 1;
    }
    flat_dim_ = c * h * w;
    head_ = std::make_unique<nn::Dense<T>>(flat_dim_, 2);
  }

  void init(Rng& rng) {
    trunk_.init(rng);
    head_->init(rng);
  }

  /// (B,1,H,W) -> (B,2) predicted (row, col) of the peak pixel.
  Tensor<T> forward(const Tensor<T>& x, bool cache) {
    if (x.dim(2) != spec_.height || x.dim(3) != spec_.width)
      throw ValidationError("aux regressor: image shape mismatch");
    const std::int64_t batch = x.dim(0);
    Tensor<T> h = trunk_.forward(x, cache);
    h.reshape({batch, flat_dim_});
    return head_->forward(h, cache);
  }

  Tensor<T> backward(const Tensor<T>& d_pred, bool accum = true) {
    // Trunk layers (conv/relu) index gradients linearly, so the flat
    // (batch, features) shape from the head can walk straight back.
    Tensor<T> dh = head_->backward(d_pred, accum);
    return trunk_.backward(std::move(dh), accum);
  }

  std::vector<Tensor<T>*> params() {
    auto out = trunk_.params();
    out.push_back(&head_->weight);
    out.push_back(&head_->bias);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    auto out = trunk_.grads();
    out.push_back(&head_->d_weight);
    out.push_back(&head_->d_bias);
    return out;
  }

 private:
  CalorimeterSpec spec_;
  std::int64_t flat_dim_ = 0;
  nn::Sequential<T> trunk_;
  std::unique_ptr<nn::Dense<T>> head_;
};

// ---------------------------------------------------------------------
// Router
// ---------------------------------------------------------------------

/// Router output for one conditioning vector.
struct GateDecision {
  std::vector<double> probs;
  int expert_id = 0;
};

inline int argmax_lowest(std::span<const double> probs) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)])
      best = i;  // strict: ties keep the lowest index
  return best;
}

template <typename T>
class Router {
 public:
  Router(int n_experts, const ModelSizes& sizes)
      : n_experts_(n_experts),
        fc1_(kCondDim, sizes.router_hidden),
        fc2_(sizes.router_hidden, sizes.router_hidden),
        head_(sizes.router_hidden, n_experts, T(0)) {}  // zero-init head

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
    head_.init(rng);  // init_scale 0 keeps the head at zero: uniform gates
  }

  /// (B,9) standardized conditioning -> (B,N) softmax probabilities.
  Tensor<T> forward_probs(const Tensor<T>& cond, bool cache) {
    Tensor<T> h1 = relu1_.forward(fc1_.forward(cond, cache), cache);
    Tensor<T> h2 = relu2_.forward(fc2_.forward(h1, cache), cache);
    Tensor<T> logits = head_.forward(h2, cache);
    const std::int64_t batch = logits.dim(0);
    Tensor<T> probs({batch, n_experts_});
    for (std::int64_t b = 0; b < batch; ++b) {
      T mx = logits(b, 0);
      for (int i = 1; i < n_experts_; ++i) mx = std::max(mx, logits(b, i));
      T denom = T(0);
      for (int i = 0; i < n_experts_; ++i) {
        probs(b, i) = std::exp(logits(b, i) - mx);
        denom += probs(b, i);
      }
      for (int i = 0; i < n_experts_; ++i) probs(b, i) /= denom;
    }
    if (cache) cached_probs_ = probs;
    return probs;
  }

  /// Backward from d/dprobs through softmax and the dense stack.
  void backward(const Tensor<T>& d_probs, bool accum = true) {
    const std::int64_t batch = d_probs.dim(0);
    Tensor<T> d_logits({batch, n_experts_});
    for (std::int64_t b = 0; b < batch; ++b) {
      T dot = T(0);
      for (int i = 0; i < n_experts_; ++i)
        dot += d_probs(b, i) * cached_probs_(b, i);
      for (int i = 0; i < n_experts_; ++i)
        d_logits(b, i) = cached_probs_(b, i) * (d_probs(b, i) - dot);
    }
    Tensor<T> d = head_.backward(d_logits, accum);
    d = relu2_.backward(d, accum);
    d = fc2_.backward(d, accum);
    d = relu1_.backward(d, accum);
    fc1_.backward(d, accum);
  }

  std::vector<Tensor<T>*> params() {
    return {&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias,
            &head_.weight, &head_.bias};
  }
  std::vector<Tensor<T>*> grads() {
    return {&fc1_.d_weight, &fc1_.d_bias, &fc2_.d_weight, &fc2_.d_bias,
            &head_.d_weight, &head_.d_bias};
  }

  int n_experts() const { return n_experts_; }

 private:
  int n_experts_;
  nn::Dense<T> fc1_, fc2_, head_;
  nn::ReLU<T> relu1_, relu2_;
  Tensor<T> cached_probs_;
};

/// Routes one standardized conditioning vector.
template <typename T>
GateDecision route(Router<T>& router, std::span<const float> cond_std) {
  Tensor<T> c({1, kCondDim});
  for (int j = 0; j < kCondDim; ++j) c(0, j) = static_cast<T>(cond_std[j]);
  Tensor<T> p = router.forward_probs(c, false);
  GateDecision g;
  g.probs.resize(static_cast<std::size_t>(router.n_experts()));
  for (int i = 0; i < router.n_experts(); ++i)
    g.probs[static_cast<std::size_t>(i)] = static_cast<double>(p(0, i));
  g.expert_id = argmax_lowest(g.probs);
  return g;
}

// ---------------------------------------------------------------------
// Expert bundle
// ---------------------------------------------------------------------

template <typename T>
struct Expert {
  Generator<T> gen;
  Discriminator<T> disc;
  AuxRegressor<T> aux;

  Expert(const CalorimeterSpec& spec, const ModelSizes& sizes)
      : gen(spec, sizes), disc(spec, sizes), aux(spec, sizes) {}

  void init(Rng& rng) {
    gen.init(rng);
    disc.init(rng);
    aux.init(rng);
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (auto* p : gen.params()) n += p->numel();
    for (auto* p : disc.params()) n += p->numel();
    for (auto* p : aux.params()) n += p->numel();
    return n;
  }
};

}  // namespace moecalo
