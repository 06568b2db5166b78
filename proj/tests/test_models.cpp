// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "moecalo/models.hpp"
#include "moecalo/nn/adam.hpp"
#include "moecalo/rng.hpp"

using namespace moecalo;

namespace {

Tensor<float> random_latent(int batch, int k, Rng& rng) {
  Tensor<float> z({batch, k});
  for (auto& v : z.v) v = static_cast<float>(rng.normal());
  return z;
}

Tensor<float> random_cond(int batch, Rng& rng) {
  Tensor<float> c({batch, kCondDim});
  for (auto& v : c.v) v = static_cast<float>(rng.normal());
  return c;
}

}  // namespace

TEST_CASE("seed geometry per detector") {
  const auto zn = SeedGeometry::for_spec(CalorimeterSpec::zn());
  REQUIRE(zn.stages == 3);
  REQUIRE(zn.h0 == 6);
  REQUIRE(zn.w0 == 6);
  REQUIRE(zn.h_big == 48);

  const auto zp = SeedGeometry::for_spec(CalorimeterSpec::zp());
  REQUIRE(zp.stages == 3);
  REQUIRE(zp.h0 == 7);
  REQUIRE(zp.w0 == 4);

  const auto t = SeedGeometry::for_spec(CalorimeterSpec::t16());
  REQUIRE(t.stages == 2);
  REQUIRE(t.h0 == 4);
  REQUIRE(t.w0 == 4);
  REQUIRE(t.h_big == 16);
}

TEST_CASE("generator output shape, range and determinism") {
  for (const auto& spec : {CalorimeterSpec::t16(), CalorimeterSpec::zp()}) {
    const auto sizes = spec.det == Detector::T16 ? ModelSizes::reduced() : ModelSizes{};
    Generator<float> g(spec, sizes);
    auto rng = Rng::keyed(1, Stream::Init);
    g.init(rng);
    auto noise = Rng::keyed(2, Stream::Noise);
    Tensor<float> z = random_latent(3, sizes.latent_dim, noise);
    Tensor<float> c = random_cond(3, noise);
    Tensor<float> y1 = g.forward(z, c, false);
    REQUIRE(y1.shape == std::vector<std::int64_t>{3, 1, spec.height, spec.width});
    for (float v : y1.v) {
      REQUIRE(v >= -1.0f);
      REQUIRE(v <= 1.0f);
    }
    Tensor<float> y2 = g.forward(z, c, false);
    REQUIRE(y1.v == y2.v);  // eval-mode forward is pure
  }
}

TEST_CASE("generator rejects a wrong latent size") {
  Generator<float> g(CalorimeterSpec::t16(), ModelSizes::reduced());
  auto rng = Rng::keyed(1, Stream::Init);
  g.init(rng);
  Tensor<float> z({2, ModelSizes::reduced().latent_dim + 1});
  Tensor<float> c({2, kCondDim});
  REQUIRE_THROWS_AS(g.forward(z, c, false), ValidationError);
}

TEST_CASE("discriminator produces scores in (0,1)") {
  const auto spec = CalorimeterSpec::t16();
  Discriminator<float> d(spec, ModelSizes::reduced());
  auto rng = Rng::keyed(3, Stream::Init);
  d.init(rng);
  auto noise = Rng::keyed(4, Stream::Noise);
  Tensor<float> x({4, 1, spec.height, spec.width});
  for (auto& v : x.v) v = static_cast<float>(noise.uniform(-1.0, 1.0));
  Tensor<float> c = random_cond(4, noise);
  Tensor<float> s = d.score(x, c);
  REQUIRE(s.numel() == 4);
  for (float v : s.v) {
    REQUIRE(v > 0.0f);
    REQUIRE(v < 1.0f);
  }
}

TEST_CASE("router with a zero head gates uniformly, ties break low") {
  ModelSizes sizes = ModelSizes::reduced();
  Router<float> r(3, sizes);
  auto rng = Rng::keyed(5, Stream::Init);
  r.init(rng);
  auto noise = Rng::keyed(6, Stream::Noise);
  const auto cond = random_cond(1, noise);
  std::array<float, kCondDim> cond_arr;
  for (int j = 0; j < kCondDim; ++j) cond_arr[static_cast<std::size_t>(j)] = cond(0, j);
  const auto gate = route(r, cond_arr);
  REQUIRE(gate.probs.size() == 3);
  REQUIRE(gate.probs[0] == gate.probs[1]);  // equal logits, bitwise-equal gates
  REQUIRE(gate.probs[1] == gate.probs[2]);
  for (double p : gate.probs) REQUIRE(std::abs(p - 1.0 / 3) < 1e-6);
  REQUIRE(gate.expert_id == 0);
}

TEST_CASE("router probabilities form a simplex") {
  Router<float> r(4, ModelSizes{});
  auto rng = Rng::keyed(7, Stream::Init);
  r.init(rng);
  // perturb the head so gates are not uniform
  auto params = r.params();
  auto noise = Rng::keyed(8, Stream::Noise);
  for (auto& v : params.back()->v) v = static_cast<float>(noise.normal());
  for (auto& v : params[params.size() - 2]->v) v = static_cast<float>(noise.normal() * 0.3);

  Tensor<float> c = random_cond(16, noise);
  Tensor<float> p = r.forward_probs(c, false);
  for (int b = 0; b < 16; ++b) {
    double sum = 0;
    for (int i = 0; i < 4; ++i) {
      REQUIRE(p(b, i) >= 0.0f);
      sum += p(b, i);
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("argmax tie-break picks the lowest index") {
  REQUIRE(argmax_lowest(std::vector<double>{0.2, 0.5, 0.3}) == 1);
  REQUIRE(argmax_lowest(std::vector<double>{0.4, 0.4, 0.2}) == 0);
  REQUIRE(argmax_lowest(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
}

TEST_CASE("aux regressor returns finite coordinate pairs per batch row") {
  const auto spec = CalorimeterSpec::t16();
  AuxRegressor<float> a(spec, ModelSizes::reduced());
  auto rng = Rng::keyed(9, Stream::Init);
  a.init(rng);
  auto noise = Rng::keyed(10, Stream::Noise);
  Tensor<float> x({5, 1, spec.height, spec.width});
  for (auto& v : x.v) v = static_cast<float>(noise.uniform(-1.0, 1.0));
  Tensor<float> y = a.forward(x, false);
  REQUIRE(y.shape == std::vector<std::int64_t>{5, 2});
  for (float v : y.v) REQUIRE(std::isfinite(v));

  Tensor<float> bad({2, 1, 8, 8});
  REQUIRE_THROWS_AS(a.forward(bad, false), ValidationError);
}

TEST_CASE("aux regressor overfits a single peak to sub-pixel accuracy") {
  const auto spec = CalorimeterSpec::t16();
  AuxRegressor<float> a(spec, ModelSizes::reduced());
  auto rng = Rng::keyed(11, Stream::Init);
  a.init(rng);

  // one fixed image with a bright blob peaked at (3,4)
  Tensor<float> x({1, 1, spec.height, spec.width});
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c) {
      const double d2 = (r - 3.0) * (r - 3.0) + (c - 4.0) * (c - 4.0);
      x(0, 0, r, c) = static_cast<float>(std::exp(-d2 / 4.0) * 2.0 - 1.0);
    }
  const float target_r = 3.0f, target_c = 4.0f;

  nn::Adam<float> opt(a.params(), a.grads(), 1e-3);
  for (int it = 0; it < 600; ++it) {
    Tensor<float> pred = a.forward(x, true);
    Tensor<float> d({1, 2});
    d(0, 0) = 2.0f * (pred(0, 0) - target_r);
    d(0, 1) = 2.0f * (pred(0, 1) - target_c);
    a.backward(d, true);
    opt.step();
    opt.zero_grads();
  }
  Tensor<float> pred = a.forward(x, false);
  const double dist = std::hypot(pred(0, 0) - target_r, pred(0, 1) - target_c);
  REQUIRE(dist < 0.5);
}

TEST_CASE("experts share a parameter count and the router stays small") {
  for (const auto& spec : {CalorimeterSpec::zp(), CalorimeterSpec::zn()}) {
    ModelSizes sizes;  // full-size preset
    std::vector<std::int64_t> counts;
    for (int i = 0; i < 3; ++i) {
      Expert<float> e(spec, sizes);
      counts.push_back(e.param_count());
    }
    REQUIRE(counts[0] == counts[1]);
    REQUIRE(counts[1] == counts[2]);

    Router<float> r(3, sizes);
    std::int64_t router_params = 0;
    for (auto* p : r.params()) router_params += p->numel();
    REQUIRE(router_params * 20 < counts[0]);  // < 5% of one expert
  }
}

TEST_CASE("reduced-size router stays under 5% of a reduced expert") {
  const auto spec = CalorimeterSpec::t16();
  const auto sizes = ModelSizes::reduced();
  Expert<float> e(spec, sizes);
  Router<float> r(3, sizes);
  std::int64_t router_params = 0;
  for (auto* p : r.params()) router_params += p->numel();
  REQUIRE(router_params * 20 < e.param_count());
}
