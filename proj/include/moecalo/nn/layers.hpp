// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer zoo with hand-written backward passes: dense, strided
// convolution, transposed convolution (exact 2x upsampling blocks),
// instance normalization and pointwise activations. Convolutions lower to
// GEMM via im2col/col2im. Finite-difference tests in tests/ pin every
// backward implementation against the forward.
//
// Calling convention: forward(x, /*cache=*/true) stores whatever the
// matching backward needs; one cached forward supports one backward.
// backward(dy, accum_param_grads) returns dL/dx and, when requested,
// accumulates dL/dparams into the layer's grad tensors.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "moecalo/errors.hpp"
#include "moecalo/rng.hpp"
#include "moecalo/tensor.hpp"

namespace moecalo::nn {

template <typename T>
struct Layer {
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool cache) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy, bool accum_param_grads) = 0;
  virtual void init(Rng& rng) {}
  virtual std::vector<Tensor<T>*> params() { return {}; }
  virtual std::vector<Tensor<T>*> grads() { return {}; }
};

// ---------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------

struct ConvGeom {
  int c_in = 0, h = 0, w = 0;        // "image" side dims
  int kernel = 0, stride = 1, pad = 0;
  int h_out = 0, w_out = 0;          // "patch grid" side dims

  static ConvGeom for_conv(int c_in, int h, int w, int kernel, int stride, int pad) {
    ConvGeom g{c_in, h, w, kernel, stride, pad, 0, 0};
    g.h_out = (h + 2 * pad - kernel) / stride + 1;
    g.w_out = (w + 2 * pad - kernel) / stride + 1;
    return g;
  }
};

/// X: (B, C, H, W) -> col: (C*k*k, B*Ho*Wo)
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeom& g, Tensor<T>& col) {
  const std::int64_t batch = x.dim(0);
  const std::int64_t cols = batch * g.h_out * g.w_out;
  col.shape = {static_cast<std::int64_t>(g.c_in) * g.kernel * g.kernel, cols};
  col.v.assign(static_cast<std::size_t>(col.shape[0] * cols), T(0));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < g.c_in; ++c) {
      for (int ki = 0; ki < g.kernel; ++ki) {
        for (int kj = 0; kj < g.kernel; ++kj) {
          const std::int64_t row =
              (static_cast<std::int64_t>(c) * g.kernel + ki) * g.kernel + kj;
          T* dst = col.data() + row * cols + b * g.h_out * g.w_out;
          for (int ho = 0; ho < g.h_out; ++ho) {
            const int src_r = ho * g.stride + ki - g.pad;
            if (src_r < 0 || src_r >= g.h) continue;
            for (int wo = 0; wo < g.w_out; ++wo) {
              const int src_c = wo * g.stride + kj - g.pad;
              if (src_c < 0 || src_c >= g.w) continue;
              dst[ho * g.w_out + wo] = x(b, c, src_r, src_c);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds col back into (B, C, H, W).
template <typename T>
void col2im(const Tensor<T>& col, const ConvGeom& g, Tensor<T>& x) {
  const std::int64_t batch = x.dim(0);
  const std::int64_t cols = batch * g.h_out * g.w_out;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < g.c_in; ++c) {
      for (int ki = 0; ki < g.kernel; ++ki) {
        for (int kj = 0; kj < g.kernel; ++kj) {
          const std::int64_t row =
              (static_cast<std::int64_t>(c) * g.kernel + ki) * g.kernel + kj;
          const T* src = col.data() + row * cols + b * g.h_out * g.w_out;
          for (int ho = 0; ho < g.h_out; ++ho) {
            const int dst_r = ho * g.stride + ki - g.pad;
            if (dst_r < 0 || dst_r >= g.h) continue;
            for (int wo = 0; wo < g.w_out; ++wo) {
              const int dst_c = wo * g.stride + kj - g.pad;
              if (dst_c < 0 || dst_c >= g.w) continue;
              x(b, c, dst_r, dst_c) += src[ho * g.w_out + wo];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------

template <typename T>
struct Dense final : Layer<T> {
  int in_dim, out_dim;
  T init_scale;  // stddev of the weight init; 0 gives an all-zero layer
  Tensor<T> weight, bias, d_weight, d_bias;
  Tensor<T> cached_x;

  Dense(int in, int out, T init_scale_ = T(-1))
      : in_dim(in), out_dim(out), init_scale(init_scale_),
        weight({out, in}), bias({out}), d_weight({out, in}), d_bias({out}) {}

  void init(Rng& rng) override {
    // Negative sentinel selects He initialization.
    const double s = init_scale < 0 ? std::sqrt(2.0 / in_dim)
                                    : static_cast<double>(init_scale);
    for (auto& v : weight.v) v = static_cast<T>(rng.normal() * s);
    bias.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    const std::int64_t batch = x.dim(0);
    Tensor<T> y({batch, out_dim});
    y.mat(batch, out_dim).noalias() =
        x.mat(batch, in_dim) * weight.mat(out_dim, in_dim).transpose();
    y.mat(batch, out_dim).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), out_dim);
    if (cache) cached_x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool accum) override {
    const std::int64_t batch = dy.dim(0);
    if (accum) {
      d_weight.mat(out_dim, in_dim).noalias() +=
          dy.mat(batch, out_dim).transpose() * cached_x.mat(batch, in_dim);
      d_bias.mat(1, out_dim).noalias() += dy.mat(batch, out_dim).colwise().sum();
    }
    Tensor<T> dx({batch, in_dim});
    dx.mat(batch, in_dim).noalias() =
        dy.mat(batch, out_dim) * weight.mat(out_dim, in_dim);
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight, &bias}; }
  std::vector<Tensor<T>*> grads() override { return {&d_weight, &d_bias}; }
};

// ---------------------------------------------------------------------
// Conv2d (stride, zero padding)
// ---------------------------------------------------------------------

template <typename T>
struct Conv2d final : Layer<T> {
  int c_in, c_out, kernel, stride, pad;
  Tensor<T> weight, bias, d_weight, d_bias;  // weight: (c_out, c_in*k*k)
  Tensor<T> cached_col;
  std::vector<std::int64_t> cached_x_shape;
  ConvGeom geom;

  Conv2d(int c_in_, int c_out_, int kernel_, int stride_, int pad_)
      : c_in(c_in_), c_out(c_out_), kernel(kernel_), stride(stride_), pad(pad_),
        weight({c_out, static_cast<std::int64_t>(c_in_) * kernel_ * kernel_}),
        bias({c_out}),
        d_weight({c_out, static_cast<std::int64_t>(c_in_) * kernel_ * kernel_}),
        d_bias({c_out}) {}

  void init(Rng& rng) override {
    // DCGAN convention: N(0, 0.02) for GAN conv stacks.
    for (auto& v : weight.v) v = static_cast<T>(rng.normal() * 0.02);
    bias.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    const std::int64_t batch = x.dim(0);
    geom = ConvGeom::for_conv(c_in, static_cast<int>(x.dim(2)),
                              static_cast<int>(x.dim(3)), kernel, stride, pad);
    Tensor<T> col;
    im2col(x, geom, col);
    const std::int64_t patch = weight.dim(1);
    const std::int64_t cols = col.dim(1);
    Tensor<T> ymat({c_out, cols});
    ymat.mat(c_out, cols).noalias() = weight.mat(c_out, patch) * col.mat(patch, cols);
    Tensor<T> y({batch, c_out, geom.h_out, geom.w_out});
    const std::int64_t hw = static_cast<std::int64_t>(geom.h_out) * geom.w_out;
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < c_out; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
          y.v[static_cast<std::size_t>(((b * c_out + c) * hw) + i)] =
              ymat(c, b * hw + i) + bias(c);
    if (cache) {
      cached_col = std::move(col);
      cached_x_shape = x.shape;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool accum) override {
    const std::int64_t batch = dy.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(geom.h_out) * geom.w_out;
    const std::int64_t cols = batch * hw;
    const std::int64_t patch = weight.dim(1);
    // Permute dy to (c_out, B*Ho*Wo)
    Tensor<T> dymat({c_out, cols});
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < c_out; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
          dymat(c, b * hw + i) =
              dy.v[static_cast<std::size_t>(((b * c_out + c) * hw) + i)];
    if (accum) {
      d_weight.mat(c_out, patch).noalias() +=
          dymat.mat(c_out, cols) * cached_col.mat(patch, cols).transpose();
      d_bias.mat(c_out, 1).noalias() += dymat.mat(c_out, cols).rowwise().sum();
    }
    Tensor<T> dcol({patch, cols});
    dcol.mat(patch, cols).noalias() =
        weight.mat(c_out, patch).transpose() * dymat.mat(c_out, cols);
    Tensor<T> dx(cached_x_shape);
    col2im(dcol, geom, dx);
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight, &bias}; }
  std::vector<Tensor<T>*> grads() override { return {&d_weight, &d_bias}; }
};

// ---------------------------------------------------------------------
// ConvTranspose2d (fractionally-strided convolution)
// ---------------------------------------------------------------------

/// Output size: (in-1)*stride - 2*pad + kernel. With kernel 4, stride 2,
/// pad 1 this doubles the spatial dims exactly.
template <typename T>
struct ConvTranspose2d final : Layer<T> {
  int c_in, c_out, kernel, stride, pad;
  Tensor<T> weight, bias, d_weight, d_bias;  // weight: (c_in, c_out*k*k)
  Tensor<T> cached_xmat;                     // (c_in, B*h*w)
  std::vector<std::int64_t> cached_x_shape;
  ConvGeom geom;  // geometry of the equivalent forward conv (image = output)

  ConvTranspose2d(int c_in_, int c_out_, int kernel_, int stride_, int pad_)
      : c_in(c_in_), c_out(c_out_), kernel(kernel_), stride(stride_), pad(pad_),
        weight({c_in, static_cast<std::int64_t>(c_out_) * kernel_ * kernel_}),
        bias({c_out}),
        d_weight({c_in, static_cast<std::int64_t>(c_out_) * kernel_ * kernel_}),
        d_bias({c_out}) {}

  void init(Rng& rng) override {
    for (auto& v : weight.v) v = static_cast<T>(rng.normal() * 0.02);
    bias.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    const std::int64_t batch = x.dim(0);
    const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
    const int h_out = (h - 1) * stride - 2 * pad + kernel;
    const int w_out = (w - 1) * stride - 2 * pad + kernel;
    geom = ConvGeom::for_conv(c_out, h_out, w_out, kernel, stride, pad);
    // Permute x to (c_in, B*h*w); it doubles as the weight-grad cache.
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> xmat({c_in, batch * hw});
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < c_in; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
          xmat(c, b * hw + i) =
              x.v[static_cast<std::size_t>(((b * c_in + c) * hw) + i)];
    const std::int64_t patch = weight.dim(1);
    Tensor<T> col({patch, batch * hw});
    col.mat(patch, batch * hw).noalias() =
        weight.mat(c_in, patch).transpose() * xmat.mat(c_in, batch * hw);
    Tensor<T> y({batch, c_out, h_out, w_out});
    col2im(col, geom, y);
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < c_out; ++c) {
        T* dst = y.data() + ((b * c_out + c) * h_out) * w_out;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h_out) * w_out; ++i)
          dst[i] += bias(c);
      }
    if (cache) {
      cached_xmat = std::move(xmat);
      cached_x_shape = x.shape;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool accum) override {
    const std::int64_t batch = dy.dim(0);
    const std::int64_t patch = weight.dim(1);
    Tensor<T> dycol;
    im2col(dy, geom, dycol);  // (c_out*k*k, B*h*w)
    const std::int64_t cols = dycol.dim(1);
    if (accum) {
      d_weight.mat(c_in, patch).noalias() +=
          cached_xmat.mat(c_in, cols) * dycol.mat(patch, cols).transpose();
      const std::int64_t hw_out =
          static_cast<std::int64_t>(geom.h) * geom.w;
      for (std::int64_t b = 0; b < batch; ++b)
        for (int c = 0; c < c_out; ++c) {
          const T* src = dy.data() + ((b * c_out + c) * hw_out);
          T acc = T(0);
          for (std::int64_t i = 0; i < hw_out; ++i) acc += src[i];
          d_bias(c) += acc;
        }
    }
    Tensor<T> dxmat({c_in, cols});
    dxmat.mat(c_in, cols).noalias() =
        weight.mat(c_in, patch) * dycol.mat(patch, cols);
    // Permute back to (B, c_in, h, w)
    Tensor<T> dx(cached_x_shape);
    const std::int64_t hw = cached_x_shape[2] * cached_x_shape[3];
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < c_in; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
          dx.v[static_cast<std::size_t>(((b * c_in + c) * hw) + i)] =
              dxmat(c, b * hw + i);
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight, &bias}; }
  std::vector<Tensor<T>*> grads() override { return {&d_weight, &d_bias}; }
};

// ---------------------------------------------------------------------
// InstanceNorm2d
// ---------------------------------------------------------------------

/// Normalizes each (sample, channel) plane over its spatial extent with a
/// learnable per-channel affine. No running statistics, so training and
/// evaluation behave identically and batches of one are fine.
template <typename T>
struct InstanceNorm2d final : Layer<T> {
  static constexpr T kEps = static_cast<T>(1e-5);
  int channels;
  Tensor<T> gamma, beta, d_gamma, d_beta;
  Tensor<T> cached_xhat;           // normalized input
  std::vector<T> cached_inv_std;   // per (b,c)

  explicit InstanceNorm2d(int channels_)
      : channels(channels_), gamma({channels_}), beta({channels_}),
        d_gamma({channels_}), d_beta({channels_}) {
    gamma.fill(T(1));
  }

  void init(Rng& rng) override {
    for (auto& v : gamma.v) v = static_cast<T>(1.0 + rng.normal() * 0.02);
    beta.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    const std::int64_t batch = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape);
    Tensor<T> xhat(x.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(batch * channels));
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < channels; ++c) {
        const T* src = x.data() + ((b * channels + c) * hw);
        T mean = 0, var = 0;
        for (std::int64_t i = 0; i < hw; ++i) mean += src[i];
        mean /= static_cast<T>(hw);
        for (std::int64_t i = 0; i < hw; ++i) {
          const T d = src[i] - mean;
          var += d * d;
        }
        var /= static_cast<T>(hw);
        const T is = T(1) / std::sqrt(var + kEps);
        inv_std[static_cast<std::size_t>(b * channels + c)] = is;
        T* xh = xhat.data() + ((b * channels + c) * hw);
        T* dst = y.data() + ((b * channels + c) * hw);
        for (std::int64_t i = 0; i < hw; ++i) {
          xh[i] = (src[i] - mean) * is;
          dst[i] = gamma(c) * xh[i] + beta(c);
        }
      }
    if (cache) {
      cached_xhat = std::move(xhat);
      cached_inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool accum) override {
    const std::int64_t batch = dy.dim(0), hw = dy.dim(2) * dy.dim(3);
    Tensor<T> dx(dy.shape);
    for (std::int64_t b = 0; b < batch; ++b)
      for (int c = 0; c < channels; ++c) {
        const T* g = dy.data() + ((b * channels + c) * hw);
        const T* xh = cached_xhat.data() + ((b * channels + c) * hw);
        const T is = cached_inv_std[static_cast<std::size_t>(b * channels + c)];
        T sum_g = 0, sum_gx = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
        if (accum) {
          d_beta(c) += sum_g;
          d_gamma(c) += sum_gx;
        }
        const T mg = sum_g / static_cast<T>(hw);
        const T mgx = sum_gx / static_cast<T>(hw);
        T* dst = dx.data() + ((b * channels + c) * hw);
        for (std::int64_t i = 0; i < hw; ++i)
          dst[i] = gamma(c) * is * (g[i] - mg - xh[i] * mgx);
      }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&gamma, &beta}; }
  std::vector<Tensor<T>*> grads() override { return {&d_gamma, &d_beta}; }
};

// ---------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------

template <typename T>
struct LeakyReLU final : Layer<T> {
  T alpha;
  Tensor<T> cached_x;
  explicit LeakyReLU(T alpha_ = static_cast<T>(0.2)) : alpha(alpha_) {}

  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i)
      y.v[i] = x.v[i] > 0 ? x.v[i] : alpha * x.v[i];
    if (cache) cached_x = x;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, bool) override {
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i)
      dx.v[i] = cached_x.v[i] > 0 ? dy.v[i] : alpha * dy.v[i];
    return dx;
  }
};

template <typename T>
struct ReLU final : Layer<T> {
  Tensor<T> cached_x;
  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0 ? x.v[i] : T(0);
    if (cache) cached_x = x;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, bool) override {
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i)
      dx.v[i] = cached_x.v[i] > 0 ? dy.v[i] : T(0);
    return dx;
  }
};

template <typename T>
struct Tanh final : Layer<T> {
  Tensor<T> cached_y;
  Tensor<T> forward(const Tensor<T>& x, bool cache) override {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = std::tanh(x.v[i]);
    if (cache) cached_y = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, bool) override {
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i)
      dx.v[i] = dy.v[i] * (T(1) - cached_y.v[i] * cached_y.v[i]);
    return dx;
  }
};

// ---------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------

template <typename T>
struct Sequential {
  std::vector<std::unique_ptr<Layer<T>>> layers;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers.push_back(std::move(layer));
    return raw;
  }

  Tensor<T> forward(Tensor<T> x, bool cache) {
    for (auto& l : layers) x = l->forward(x, cache);
    return x;
  }

  Tensor<T> backward(Tensor<T> dy, bool accum_param_grads) {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
      dy = (*it)->backward(dy, accum_param_grads);
    return dy;
  }

  void init(Rng& rng) {
    for (auto& l : layers) l->init(rng);
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers)
      for (auto* g : l->grads()) out.push_back(g);
    return out;
  }
};

inline std::int64_t param_count(const std::vector<Tensor<float>*>& ps) {
  std::int64_t n = 0;
  for (auto* p : ps) n += p->numel();
  return n;
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>*>& gs) {
  for (auto* g : gs) g->fill(T(0));
}

}  // namespace moecalo::nn
