// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: TOML file -> typed sections with defaults applied.
// Paths are resolved against output_dir (absolute paths pass through), and
// the fully resolved config is written next to every artifact so any run
// can be repeated verbatim.

#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/losses.hpp"
#include "moecalo/models.hpp"
#include "moecalo/synthgen.hpp"
#include "moecalo/toml.hpp"
#include "moecalo/training.hpp"

namespace moecalo {

struct SynthSection {
  std::string detector = "ZN";
  int n_samples = 1000;
  std::array<double, 3> mode_fractions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<std::pair<double, double>, 3> intensity_ranges = {
      {{50.0, 200.0}, {500.0, 1500.0}, {3000.0, 8000.0}}};
  std::array<std::pair<double, double>, 3> spread_ranges = {
      {{6.0, 10.0}, {3.0, 5.0}, {1.0, 2.0}}};
  std::string out = "synth.h5";

  SynthConfig to_synth_config(std::uint64_t seed) const {
    SynthConfig cfg;
    cfg.spec = CalorimeterSpec::from_name(detector);
    cfg.n_samples = n_samples;
    cfg.seed = seed;
    cfg.mode_fractions = mode_fractions;
    for (int m = 0; m < 3; ++m) {
      cfg.intensity_ranges[static_cast<std::size_t>(m)] =
          intensity_ranges[static_cast<std::size_t>(m)];
      cfg.spread_ranges[static_cast<std::size_t>(m)] =
          spread_ranges[static_cast<std::size_t>(m)];
    }
    return cfg;
  }
};

struct TrainSection {
  std::string data;  // input archive
  std::string detector = "ZN";
  int n_experts = 3;
  int epochs = 10;
  int batch_size = 128;
  double lambda_div = 0.05, lambda_in = 0.001, lambda_aux = 1.0;
  double lambda_util = 0.01, lambda_diff = 0.0001, epsilon = 1e-8;
  double lr_generator = 2e-4, lr_discriminator = 2e-4, lr_aux = 1e-4,
         lr_router = 1e-4;
  double beta1 = 0.5, beta2 = 0.999;
  double split_ratio = 0.8;
  // -1 selects the per-detector preset (full for ZP/ZN, reduced for T16).
  int latent_dim = -1, gen_channels = -1, disc_channels = -1, aux_channels = -1,
      router_hidden = -1;
  std::string out_dir = "run";

  ModelSizes resolved_sizes() const {
    const auto spec = CalorimeterSpec::from_name(detector);
    ModelSizes s = spec.det == Detector::T16 ? ModelSizes::reduced() : ModelSizes{};
    if (latent_dim > 0) s.latent_dim = latent_dim;
    if (gen_channels > 0) s.gen_channels = gen_channels;
    if (disc_channels > 0) s.disc_channels = disc_channels;
    if (aux_channels > 0) s.aux_channels = aux_channels;
    if (router_hidden > 0) s.router_hidden = router_hidden;
    return s;
  }

  TrainConfig to_train_config(std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.n_experts = n_experts;
    cfg.hp = HyperParams{lambda_div, lambda_in, lambda_aux, lambda_util,
                         lambda_diff, epsilon};
    cfg.batch_size = batch_size;
    cfg.epochs = epochs;
    cfg.lr_generator = lr_generator;
    cfg.lr_discriminator = lr_discriminator;
    cfg.lr_aux = lr_aux;
    cfg.lr_router = lr_router;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.seed = seed;
    cfg.spec = CalorimeterSpec::from_name(detector);
    cfg.sizes = resolved_sizes();
    cfg.split_ratio = split_ratio;
    return cfg;
  }
};

struct EvalSection {
  std::string checkpoint;
  std::string data;
  int bins = 64;
  std::string out_dir = "eval";
};

struct GenerateSection {
  std::string checkpoint;
  std::string conditions;  // archive supplying the conditioning vectors
  int limit = 0;           // 0 = all
  std::string out = "generated.h5";
};

struct BenchSection {
  std::string checkpoint;  // empty: benchmark a freshly initialized model
  std::string detector = "T16";
  int n_experts = 3;
  int n = 10000;
  std::string device_label = "cpu";
};

struct AblateSection {
  std::vector<int> expert_counts = {1, 2, 3, 4, 5};
  bool lambda_grid = true;
  std::string detector = "T16";
  int n_samples = 6000;
  int epochs = 6;
  int batch_size = 128;
  std::string out = "ablate.csv";
};

struct RunConfig {
  std::string output_dir;  // resolution: flag > config > env > "out"
  std::uint64_t seed = 0;
  SynthSection synth;
  TrainSection train;
  EvalSection eval;
  GenerateSection generate;
  BenchSection bench;
  AblateSection ablate;

  /// Joins a config path with output_dir unless it is absolute or empty.
  std::string resolve(const std::string& path) const {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(output_dir) / p).string();
  }
};

namespace detail {

inline std::array<std::pair<double, double>, 3> parse_ranges(
    const toml::Document& doc, const std::string& key,
    std::array<std::pair<double, double>, 3> dflt) {
  if (!doc.has(key)) return dflt;
  const auto& v = doc.at(key);
  if (!v.is_array() || v.as_array().size() != 3)
    throw ValidationError("config: field '" + key + "' must be 3 [lo, hi] pairs");
  std::array<std::pair<double, double>, 3> out;
  for (int m = 0; m < 3; ++m) {
    const auto& pair = v.as_array()[static_cast<std::size_t>(m)];
    if (!pair.is_array() || pair.as_array().size() != 2 ||
        !pair.as_array()[0].is_number() || !pair.as_array()[1].is_number())
      throw ValidationError("config: field '" + key + "' must be 3 [lo, hi] pairs");
    out[static_cast<std::size_t>(m)] = {pair.as_array()[0].as_double(),
                                        pair.as_array()[1].as_double()};
  }
  return out;
}

inline toml::Value ranges_value(const std::array<std::pair<double, double>, 3>& r) {
  toml::Array outer;
  for (const auto& [lo, hi] : r) {
    toml::Array inner;
    inner.emplace_back(lo);
    inner.emplace_back(hi);
    outer.emplace_back(std::move(inner));
  }
  return toml::Value(std::move(outer));
}

}  // namespace detail

inline RunConfig parse_run_config(const toml::Document& doc) {
  RunConfig rc;
  rc.output_dir = doc.get_string("output_dir", "");
  rc.seed = static_cast<std::uint64_t>(doc.get_int("seed", 0));

  auto& sy = rc.synth;
  sy.detector = doc.get_string("synth.detector", sy.detector);
  sy.n_samples = static_cast<int>(doc.get_int("synth.n_samples", sy.n_samples));
  const auto fr = doc.get_double_array(
      "synth.mode_fractions",
      {sy.mode_fractions[0], sy.mode_fractions[1], sy.mode_fractions[2]});
  if (fr.size() != 3)
    throw ValidationError("config: field 'synth.mode_fractions' must have 3 entries");
  std::copy(fr.begin(), fr.end(), sy.mode_fractions.begin());
  sy.intensity_ranges =
      detail::parse_ranges(doc, "synth.intensity_ranges", sy.intensity_ranges);
  sy.spread_ranges = detail::parse_ranges(doc, "synth.spread_ranges", sy.spread_ranges);
  sy.out = doc.get_string("synth.out", sy.out);

  auto& tr = rc.train;
  tr.data = doc.get_string("train.data", tr.data);
  tr.detector = doc.get_string("train.detector", tr.detector);
  tr.n_experts = static_cast<int>(doc.get_int("train.n_experts", tr.n_experts));
  tr.epochs = static_cast<int>(doc.get_int("train.epochs", tr.epochs));
  tr.batch_size = static_cast<int>(doc.get_int("train.batch_size", tr.batch_size));
  tr.lambda_div = doc.get_double("train.lambda_div", tr.lambda_div);
  tr.lambda_in = doc.get_double("train.lambda_in", tr.lambda_in);
  tr.lambda_aux = doc.get_double("train.lambda_aux", tr.lambda_aux);
  tr.lambda_util = doc.get_double("train.lambda_util", tr.lambda_util);
  tr.lambda_diff = doc.get_double("train.lambda_diff", tr.lambda_diff);
  tr.epsilon = doc.get_double("train.epsilon", tr.epsilon);
  tr.lr_generator = doc.get_double("train.lr_generator", tr.lr_generator);
  tr.lr_discriminator = doc.get_double("train.lr_discriminator", tr.lr_discriminator);
  tr.lr_aux = doc.get_double("train.lr_aux", tr.lr_aux);
  tr.lr_router = doc.get_double("train.lr_router", tr.lr_router);
  tr.beta1 = doc.get_double("train.beta1", tr.beta1);
  tr.beta2 = doc.get_double("train.beta2", tr.beta2);
  tr.split_ratio = doc.get_double("train.split_ratio", tr.split_ratio);
  tr.latent_dim = static_cast<int>(doc.get_int("train.latent_dim", tr.latent_dim));
  tr.gen_channels = static_cast<int>(doc.get_int("train.gen_channels", tr.gen_channels));
  tr.disc_channels =
      static_cast<int>(doc.get_int("train.disc_channels", tr.disc_channels));
  tr.aux_channels = static_cast<int>(doc.get_int("train.aux_channels", tr.aux_channels));
  tr.router_hidden =
      static_cast<int>(doc.get_int("train.router_hidden", tr.router_hidden));
  tr.out_dir = doc.get_string("train.out_dir", tr.out_dir);

  auto& ev = rc.eval;
  ev.checkpoint = doc.get_string("eval.checkpoint", ev.checkpoint);
  ev.data = doc.get_string("eval.data", ev.data);
  ev.bins = static_cast<int>(doc.get_int("eval.bins", ev.bins));
  ev.out_dir = doc.get_string("eval.out_dir", ev.out_dir);

  auto& ge = rc.generate;
  ge.checkpoint = doc.get_string("generate.checkpoint", ge.checkpoint);
  ge.conditions = doc.get_string("generate.conditions", ge.conditions);
  ge.limit = static_cast<int>(doc.get_int("generate.limit", ge.limit));
  ge.out = doc.get_string("generate.out", ge.out);

  auto& be = rc.bench;
  be.checkpoint = doc.get_string("bench.checkpoint", be.checkpoint);
  be.detector = doc.get_string("bench.detector", be.detector);
  be.n_experts = static_cast<int>(doc.get_int("bench.n_experts", be.n_experts));
  be.n = static_cast<int>(doc.get_int("bench.n", be.n));
  be.device_label = doc.get_string("bench.device_label", be.device_label);

  auto& ab = rc.ablate;
  if (doc.has("ablate.expert_counts")) {
    ab.expert_counts.clear();
    for (double v : doc.get_double_array("ablate.expert_counts", {}))
      ab.expert_counts.push_back(static_cast<int>(v));
  }
  ab.lambda_grid = doc.get_bool("ablate.lambda_grid", ab.lambda_grid);
  ab.detector = doc.get_string("ablate.detector", ab.detector);
  ab.n_samples = static_cast<int>(doc.get_int("ablate.n_samples", ab.n_samples));
  ab.epochs = static_cast<int>(doc.get_int("ablate.epochs", ab.epochs));
  ab.batch_size = static_cast<int>(doc.get_int("ablate.batch_size", ab.batch_size));
  ab.out = doc.get_string("ablate.out", ab.out);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(toml::parse(text));
}

/// Applies the output_dir precedence: CLI flag > config > env > "out".
inline void finalize_output_dir(RunConfig& rc, const std::string& flag_value) {
  if (!flag_value.empty()) {
    rc.output_dir = flag_value;
  } else if (rc.output_dir.empty()) {
    const char* env = std::getenv("MOECALO_OUTPUT_DIR");
    rc.output_dir = env && *env ? env : "out";
  }
}

inline toml::Document run_config_to_toml(const RunConfig& rc) {
  toml::Document d;
  d.kv.emplace("output_dir", rc.output_dir);
  d.kv.emplace("seed", static_cast<std::int64_t>(rc.seed));

  const auto& sy = rc.synth;
  d.kv.emplace("synth.detector", sy.detector);
  d.kv.emplace("synth.n_samples", sy.n_samples);
  {
    toml::Array fr;
    for (double f : sy.mode_fractions) fr.emplace_back(f);
    d.kv.emplace("synth.mode_fractions", toml::Value(std::move(fr)));
  }
  d.kv.emplace("synth.intensity_ranges", detail::ranges_value(sy.intensity_ranges));
  d.kv.emplace("synth.spread_ranges", detail::ranges_value(sy.spread_ranges));
  d.kv.emplace("synth.out", sy.out);

  const auto& tr = rc.train;
  d.kv.emplace("train.data", tr.data);
  d.kv.emplace("train.detector", tr.detector);
  d.kv.emplace("train.n_experts", tr.n_experts);
  d.kv.emplace("train.epochs", tr.epochs);
  d.kv.emplace("train.batch_size", tr.batch_size);
  d.kv.emplace("train.lambda_div", tr.lambda_div);
  d.kv.emplace("train.lambda_in", tr.lambda_in);
  d.kv.emplace("train.lambda_aux", tr.lambda_aux);
  d.kv.emplace("train.lambda_util", tr.lambda_util);
  d.kv.emplace("train.lambda_diff", tr.lambda_diff);
  d.kv.emplace("train.epsilon", tr.epsilon);
  d.kv.emplace("train.lr_generator", tr.lr_generator);
  d.kv.emplace("train.lr_discriminator", tr.lr_discriminator);
  d.kv.emplace("train.lr_aux", tr.lr_aux);
  d.kv.emplace("train.lr_router", tr.lr_router);
  d.kv.emplace("train.beta1", tr.beta1);
  d.kv.emplace("train.beta2", tr.beta2);
  d.kv.emplace("train.split_ratio", tr.split_ratio);
  const ModelSizes sizes = tr.resolved_sizes();
  d.kv.emplace("train.latent_dim", sizes.latent_dim);
  d.kv.emplace("train.gen_channels", sizes.gen_channels);
  d.kv.emplace("train.disc_channels", sizes.disc_channels);
  d.kv.emplace("train.aux_channels", sizes.aux_channels);
  d.kv.emplace("train.router_hidden", sizes.router_hidden);
  d.kv.emplace("train.out_dir", tr.out_dir);

  const auto& ev = rc.eval;
  d.kv.emplace("eval.checkpoint", ev.checkpoint);
  d.kv.emplace("eval.data", ev.data);
  d.kv.emplace("eval.bins", ev.bins);
  d.kv.emplace("eval.out_dir", ev.out_dir);

  const auto& ge = rc.generate;
  d.kv.emplace("generate.checkpoint", ge.checkpoint);
  d.kv.emplace("generate.conditions", ge.conditions);
  d.kv.emplace("generate.limit", ge.limit);
  d.kv.emplace("generate.out", ge.out);

  const auto& be = rc.bench;
  d.kv.emplace("bench.checkpoint", be.checkpoint);
  d.kv.emplace("bench.detector", be.detector);
  d.kv.emplace("bench.n_experts", be.n_experts);
  d.kv.emplace("bench.n", be.n);
  d.kv.emplace("bench.device_label", be.device_label);

  const auto& ab = rc.ablate;
  {
    toml::Array counts;
    for (int c : ab.expert_counts) counts.emplace_back(c);
    d.kv.emplace("ablate.expert_counts", toml::Value(std::move(counts)));
  }
  d.kv.emplace("ablate.lambda_grid", ab.lambda_grid);
  d.kv.emplace("ablate.detector", ab.detector);
  d.kv.emplace("ablate.n_samples", ab.n_samples);
  d.kv.emplace("ablate.epochs", ab.epochs);
  d.kv.emplace("ablate.batch_size", ab.batch_size);
  d.kv.emplace("ablate.out", ab.out);
  return d;
}

/// Writes the fully resolved config next to an artifact directory.
inline void write_effective_config(const RunConfig& rc, const std::string& dir,
                                   const std::string& command) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/effective_config." + command + ".toml";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write effective config to " + path);
  f << toml::write(run_config_to_toml(rc));
}

}  // namespace moecalo
