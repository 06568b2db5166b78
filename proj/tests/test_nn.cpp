// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layer-level checks: forwards against brute-force references, backwards
// against central finite differences (double precision).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "moecalo/nn/adam.hpp"
#include "moecalo/nn/layers.hpp"
#include "moecalo/rng.hpp"

using namespace moecalo;
using namespace moecalo::nn;

namespace {

Tensor<double> random_tensor(std::vector<std::int64_t> shape, Rng& rng,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar probe loss: sum of elementwise products with fixed random
/// weights. Its gradient w.r.t. the layer output is just the weights.
struct Probe {
  Tensor<double> w;
  explicit Probe(const Tensor<double>& y, Rng& rng) : w(y.shape) {
    for (auto& v : w.v) v = rng.uniform(-1.0, 1.0);
  }
  double operator()(const Tensor<double>& y) const {
    double acc = 0;
    for (std::size_t i = 0; i < y.v.size(); ++i) acc += w.v[i] * y.v[i];
    return acc;
  }
};

/// Central-difference check of every input and parameter gradient of a
/// layer under the probe loss.
void check_layer_gradients(Layer<double>& layer, Tensor<double> x, Rng& rng,
                           double h = 1e-6, double tol = 1e-6) {
  Tensor<double> y = layer.forward(x, true);
  Probe probe(y, rng);
  for (auto* g : layer.grads()) g->fill(0.0);
  Tensor<double> dx = layer.backward(probe.w, true);

  auto fd_check = [&](double analytic, double* slot) {
    const double orig = *slot;
    *slot = orig + h;
    const double fp = probe(layer.forward(x, false));
    *slot = orig - h;
    const double fm = probe(layer.forward(x, false));
    *slot = orig;
    const double fd = (fp - fm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    REQUIRE(std::abs(fd - analytic) / denom < tol);
  };

  for (std::size_t i = 0; i < x.v.size(); ++i) fd_check(dx.v[i], &x.v[i]);
  const auto params = layer.params();
  const auto grads = layer.grads();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->v.size(); ++i)
      fd_check(grads[k]->v[i], &params[k]->v[i]);
}

/// Direct convolution reference.
Tensor<double> conv_reference(const Tensor<double>& x, const Conv2d<double>& conv) {
  const std::int64_t B = x.dim(0);
  const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
  const int k = conv.kernel, s = conv.stride, p = conv.pad;
  const int Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  Tensor<double> y({B, conv.c_out, Ho, Wo});
  for (std::int64_t b = 0; b < B; ++b)
    for (int co = 0; co < conv.c_out; ++co)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double acc = conv.bias(co);
          for (int ci = 0; ci < conv.c_in; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int r = ho * s + ki - p, c = wo * s + kj - p;
                if (r < 0 || r >= H || c < 0 || c >= W) continue;
                acc += x(b, ci, r, c) * conv.weight(co, (ci * k + ki) * k + kj);
              }
          y(b, co, ho, wo) = acc;
        }
  return y;
}

/// Direct transposed-convolution reference.
Tensor<double> deconv_reference(const Tensor<double>& x,
                                const ConvTranspose2d<double>& d) {
  const std::int64_t B = x.dim(0);
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int k = d.kernel, s = d.stride, p = d.pad;
  const int Ho = (h - 1) * s - 2 * p + k, Wo = (w - 1) * s - 2 * p + k;
  Tensor<double> y({B, d.c_out, Ho, Wo});
  for (std::int64_t b = 0; b < B; ++b)
    for (int co = 0; co < d.c_out; ++co) {
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) y(b, co, oy, ox) = d.bias(co);
      for (int ci = 0; ci < d.c_in; ++ci)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s + ky - p, ox = ix * s + kx - p;
                if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
                y(b, co, oy, ox) +=
                    x(b, ci, iy, ix) * d.weight(ci, (co * k + ky) * k + kx);
              }
    }
  return y;
}

}  // namespace

TEST_CASE("dense layer gradients") {
  auto rng = Rng::keyed(1, Stream::Init);
  Dense<double> layer(5, 4);
  layer.init(rng);
  check_layer_gradients(layer, random_tensor({3, 5}, rng), rng);
}

TEST_CASE("conv2d forward matches the direct reference") {
  auto rng = Rng::keyed(2, Stream::Init);
  for (auto [k, s, p] : {std::array{3, 2, 1}, std::array{4, 2, 1}, std::array{3, 1, 1}}) {
    Conv2d<double> conv(2, 3, k, s, p);
    conv.init(rng);
    for (auto& v : conv.bias.v) v = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor({2, 2, 6, 5}, rng);
    Tensor<double> y = conv.forward(x, false);
    Tensor<double> ref = conv_reference(x, conv);
    REQUIRE(y.shape == ref.shape);
    for (std::size_t i = 0; i < y.v.size(); ++i)
      REQUIRE(std::abs(y.v[i] - ref.v[i]) < 1e-12);
  }
}

TEST_CASE("conv2d gradients") {
  auto rng = Rng::keyed(3, Stream::Init);
  Conv2d<double> conv(2, 3, 3, 2, 1);
  conv.init(rng);
  check_layer_gradients(conv, random_tensor({2, 2, 5, 4}, rng), rng);
}

TEST_CASE("transposed conv forward matches the direct reference") {
  auto rng = Rng::keyed(4, Stream::Init);
  ConvTranspose2d<double> d(3, 2, 4, 2, 1);
  d.init(rng);
  for (auto& v : d.bias.v) v = rng.uniform(-0.5, 0.5);
  Tensor<double> x = random_tensor({2, 3, 4, 3}, rng);
  Tensor<double> y = d.forward(x, false);
  Tensor<double> ref = deconv_reference(x, d);
  REQUIRE(y.shape == ref.shape);
  REQUIRE(y.dim(2) == 8);  // (4-1)*2 - 2 + 4
  REQUIRE(y.dim(3) == 6);
  for (std::size_t i = 0; i < y.v.size(); ++i)
    REQUIRE(std::abs(y.v[i] - ref.v[i]) < 1e-12);
}

TEST_CASE("transposed conv gradients") {
  auto rng = Rng::keyed(5, Stream::Init);
  ConvTranspose2d<double> d(2, 2, 4, 2, 1);
  d.init(rng);
  check_layer_gradients(d, random_tensor({2, 2, 3, 3}, rng), rng);
}

TEST_CASE("instance norm normalizes each plane and backpropagates") {
  auto rng = Rng::keyed(6, Stream::Init);
  InstanceNorm2d<double> in(3);
  Tensor<double> x = random_tensor({2, 3, 4, 4}, rng, 0.0, 10.0);
  Tensor<double> y = in.forward(x, false);  // affine still at identity
  for (std::int64_t b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int i = 0; i < 16; ++i) mean += y(b, c, i / 4, i % 4);
      mean /= 16;
      for (int i = 0; i < 16; ++i) {
        const double dd = y(b, c, i / 4, i % 4) - mean;
        var += dd * dd;
      }
      var /= 16;
      REQUIRE(std::abs(mean) < 1e-10);
      REQUIRE(std::abs(var - 1.0) < 1e-3);
    }
  in.init(rng);  // non-trivial affine for the gradient check
  check_layer_gradients(in, random_tensor({2, 3, 3, 4}, rng), rng, 1e-6, 1e-5);
}

TEST_CASE("activation gradients") {
  auto rng = Rng::keyed(7, Stream::Init);
  {
    LeakyReLU<double> l(0.2);
    // keep inputs away from the kink at zero
    Tensor<double> x = random_tensor({2, 10}, rng);
    for (auto& v : x.v) v += v > 0 ? 0.5 : -0.5;
    check_layer_gradients(l, x, rng);
  }
  {
    ReLU<double> l;
    Tensor<double> x = random_tensor({2, 10}, rng);
    for (auto& v : x.v) v += v > 0 ? 0.5 : -0.5;
    check_layer_gradients(l, x, rng);
  }
  {
    Tanh<double> l;
    check_layer_gradients(l, random_tensor({2, 10}, rng, -2.0, 2.0), rng);
  }
}

TEST_CASE("sequential composes forward and backward") {
  auto rng = Rng::keyed(8, Stream::Init);
  Sequential<double> seq;
  seq.add<Dense<double>>(6, 8);
  seq.add<Tanh<double>>();
  seq.add<Dense<double>>(8, 3);
  seq.init(rng);
  Tensor<double> x = random_tensor({4, 6}, rng);
  Tensor<double> y = seq.forward(x, true);
  Probe probe(y, rng);
  zero_grads(seq.grads());
  Tensor<double> dx = seq.backward(probe.w, true);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    auto xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    const double fd = (probe(seq.forward(xp, false)) - probe(seq.forward(xm, false))) / (2 * h);
    REQUIRE(std::abs(fd - dx.v[i]) < 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor<float> p({4});
  Tensor<float> g({4});
  for (int i = 0; i < 4; ++i) p(i) = 10.0f + i;
  Adam<float> opt({&p}, {&g}, 0.1);
  for (int it = 0; it < 500; ++it) {
    for (int i = 0; i < 4; ++i) g(i) = 2.0f * (p(i) - 3.0f);
    opt.step();
    opt.zero_grads();
  }
  for (int i = 0; i < 4; ++i) REQUIRE(std::abs(p(i) - 3.0f) < 1e-2f);
}
