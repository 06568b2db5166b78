// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single-archive checkpoint: every parameter tensor of every network, the
// conditioning standardizer, the value-transform scale, hyperparameters
// and the split recipe needed to reconstruct the exact test set.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/hdf5_io.hpp"
#include "moecalo/losses.hpp"
#include "moecalo/models.hpp"
#include "moecalo/rng.hpp"
#include "moecalo/transforms.hpp"
#include "moecalo/version.hpp"

namespace moecalo {

/// Everything needed to generate: the trained networks plus the fitted
/// preprocessing state. Construct via make_bundle or load_checkpoint and
/// keep it in place afterwards (optimizers capture parameter pointers).
struct ModelBundle {
  CalorimeterSpec spec;
  ModelSizes sizes;
  HyperParams hp;
  int n_experts = 3;
  std::uint64_t seed = 0;
  int epoch = 0;

  // Split recipe recorded at training time so evaluation can rebuild the
  // held-out set from the same archive.
  std::int64_t split_n = 0;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;

  Standardizer standardizer;
  ValueTransform transform;

  Router<float> router;
  std::vector<Expert<float>> experts;

  ModelBundle(const CalorimeterSpec& spec_, const ModelSizes& sizes_,
              const HyperParams& hp_, int n_experts_, std::uint64_t seed_)
      : spec(spec_), sizes(sizes_), hp(hp_), n_experts(n_experts_), seed(seed_),
        router(n_experts_, sizes_) {
    if (n_experts_ < 1) throw ValidationError("bundle: n_experts must be >= 1");
    experts.reserve(static_cast<std::size_t>(n_experts_));
    for (int i = 0; i < n_experts_; ++i) experts.emplace_back(spec_, sizes_);
  }

  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ModelBundle(ModelBundle&&) = default;

  void init_params() {
    for (int i = 0; i < n_experts; ++i) {
      auto rg = Rng::keyed(seed, Stream::Init, {static_cast<std::uint64_t>(i), 0});
      experts[static_cast<std::size_t>(i)].gen.init(rg);
      auto rd = Rng::keyed(seed, Stream::Init, {static_cast<std::uint64_t>(i), 1});
      experts[static_cast<std::size_t>(i)].disc.init(rd);
      auto ra = Rng::keyed(seed, Stream::Init, {static_cast<std::uint64_t>(i), 2});
      experts[static_cast<std::size_t>(i)].aux.init(ra);
    }
    auto rr = Rng::keyed(seed, Stream::Init, {0x9047ULL, 3});
    router.init(rr);
  }
};

inline std::unique_ptr<ModelBundle> make_bundle(const CalorimeterSpec& spec,
                                                const ModelSizes& sizes,
                                                const HyperParams& hp,
                                                int n_experts,
                                                std::uint64_t seed) {
  auto b = std::make_unique<ModelBundle>(spec, sizes, hp, n_experts, seed);
  b->init_params();
  return b;
}

namespace detail {

inline void save_net_params(h5::File& f, const std::string& prefix,
                            const std::vector<Tensor<float>*>& params) {
  for (std::size_t j = 0; j < params.size(); ++j) {
    const auto& t = *params[j];
    std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
    f.write_f32(prefix + "/p" + std::to_string(j), t.v, dims);
  }
}

inline void load_net_params(const h5::File& f, const std::string& prefix,
                            const std::vector<Tensor<float>*>& params) {
  for (std::size_t j = 0; j < params.size(); ++j) {
    const auto data = f.read_f32(prefix + "/p" + std::to_string(j));
    if (data.size() != params[j]->v.size())
      throw SchemaError("checkpoint: tensor " + prefix + "/p" + std::to_string(j) +
                        " has " + std::to_string(data.size()) + " values, expected " +
                        std::to_string(params[j]->v.size()));
    params[j]->v.assign(data.begin(), data.end());
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelBundle& b) {
  auto f = h5::File::create(path);
  f.write_attr("format_version", static_cast<std::int64_t>(kFormatVersion));
  f.write_attr("detector", std::string(b.spec.name()));
  f.write_attr("n_experts", static_cast<std::int64_t>(b.n_experts));
  f.write_attr("latent_dim", static_cast<std::int64_t>(b.sizes.latent_dim));
  f.write_attr("gen_channels", static_cast<std::int64_t>(b.sizes.gen_channels));
  f.write_attr("disc_channels", static_cast<std::int64_t>(b.sizes.disc_channels));
  f.write_attr("aux_channels", static_cast<std::int64_t>(b.sizes.aux_channels));
  f.write_attr("router_hidden", static_cast<std::int64_t>(b.sizes.router_hidden));
  f.write_attr("seed", static_cast<std::int64_t>(b.seed));
  f.write_attr("epoch", static_cast<std::int64_t>(b.epoch));
  f.write_attr("split_n", b.split_n);
  f.write_attr("split_ratio", b.split_ratio);
  f.write_attr("split_seed", static_cast<std::int64_t>(b.split_seed));
  f.write_attr("lambda_div", b.hp.lambda_div);
  f.write_attr("lambda_in", b.hp.lambda_in);
  f.write_attr("lambda_aux", b.hp.lambda_aux);
  f.write_attr("lambda_util", b.hp.lambda_util);
  f.write_attr("lambda_diff", b.hp.lambda_diff);
  f.write_attr("epsilon", b.hp.epsilon);
  f.write_attr("transform_log_max", static_cast<double>(b.transform.log_max));

  std::vector<float> mean(b.standardizer.mean.begin(), b.standardizer.mean.end());
  std::vector<float> stdev(b.standardizer.stdev.begin(), b.standardizer.stdev.end());
  const std::uint64_t nine[1] = {kCondDim};
  f.write_f32("/standardizer/mean", mean, nine);
  f.write_f32("/standardizer/stdev", stdev, nine);

  detail::save_net_params(f, "/router", b.router.params());
  for (int i = 0; i < b.n_experts; ++i) {
    auto& e = b.experts[static_cast<std::size_t>(i)];
    const std::string p = "/expert" + std::to_string(i);
    detail::save_net_params(f, p + "/gen", e.gen.params());
    detail::save_net_params(f, p + "/disc", e.disc.params());
    detail::save_net_params(f, p + "/aux", e.aux.params());
  }
}

inline std::unique_ptr<ModelBundle> load_checkpoint(const std::string& path) {
  auto f = h5::File::open_readonly(path);
  const auto ver = f.read_attr_i64("format_version");
  if (ver != kFormatVersion)
    throw SchemaError("checkpoint: unsupported format_version " + std::to_string(ver));
  const auto spec = CalorimeterSpec::from_name(f.read_attr_string("detector"));
  ModelSizes sizes;
  sizes.latent_dim = static_cast<int>(f.read_attr_i64("latent_dim"));
  sizes.gen_channels = static_cast<int>(f.read_attr_i64("gen_channels"));
  sizes.disc_channels = static_cast<int>(f.read_attr_i64("disc_channels"));
  sizes.aux_channels = static_cast<int>(f.read_attr_i64("aux_channels"));
  sizes.router_hidden = static_cast<int>(f.read_attr_i64("router_hidden"));
  HyperParams hp;
  hp.lambda_div = f.read_attr_f64("lambda_div");
  hp.lambda_in = f.read_attr_f64("lambda_in");
  hp.lambda_aux = f.read_attr_f64("lambda_aux");
  hp.lambda_util = f.read_attr_f64("lambda_util");
  hp.lambda_diff = f.read_attr_f64("lambda_diff");
  hp.epsilon = f.read_attr_f64("epsilon");
  const int n_experts = static_cast<int>(f.read_attr_i64("n_experts"));
  const auto seed = static_cast<std::uint64_t>(f.read_attr_i64("seed"));

  auto b = std::make_unique<ModelBundle>(spec, sizes, hp, n_experts, seed);
  b->epoch = static_cast<int>(f.read_attr_i64("epoch"));
  b->split_n = f.read_attr_i64("split_n");
  b->split_ratio = f.read_attr_f64("split_ratio");
  b->split_seed = static_cast<std::uint64_t>(f.read_attr_i64("split_seed"));
  b->transform.log_max = static_cast<float>(f.read_attr_f64("transform_log_max"));

  const auto mean = f.read_f32("/standardizer/mean");
  const auto stdev = f.read_f32("/standardizer/stdev");
  if (mean.size() != kCondDim || stdev.size() != kCondDim)
    throw SchemaError("checkpoint: standardizer must have 9 fields");
  std::copy(mean.begin(), mean.end(), b->standardizer.mean.begin());
  std::copy(stdev.begin(), stdev.end(), b->standardizer.stdev.begin());

  detail::load_net_params(f, "/router", b->router.params());
  for (int i = 0; i < n_experts; ++i) {
    auto& e = b->experts[static_cast<std::size_t>(i)];
    const std::string p = "/expert" + std::to_string(i);
    detail::load_net_params(f, p + "/gen", e.gen.params());
    detail::load_net_params(f, p + "/disc", e.disc.params());
    detail::load_net_params(f, p + "/aux", e.aux.params());
  }
  return b;
}

}  // namespace moecalo
