// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "moecalo/dataset.hpp"
#include "moecalo/synthgen.hpp"
#include "moecalo/transforms.hpp"

using namespace moecalo;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

bool same_bytes(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !ca.empty() && ca == cb;
}

ParticleConditions make_cond(float energy) {
  ParticleConditions c;
  c.energy = energy;
  c.mass = 0.938f;
  c.charge = 1.0f;
  c.mom_z = 5.0f;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------
// Value transform
// ---------------------------------------------------------------------

TEST_CASE("value transform endpoints and round trip") {
  std::vector<float> counts{0, 1, 10, 250, 4000};
  const auto t = ValueTransform::fit(counts);
  REQUIRE(t.forward(0.0f) == -1.0f);
  REQUIRE(std::abs(t.forward(4000.0f) - 1.0f) < 1e-6f);

  auto rng = Rng::keyed(3, Stream::Noise);
  for (int i = 0; i < 1000; ++i) {
    const float p = static_cast<float>(rng.uniform(0.0, 4000.0));
    const float back = t.inverse(t.forward(p));
    const float denom = std::max(p, 1.0f);
    REQUIRE(std::abs(back - p) / denom < 1e-5f);
  }
}

TEST_CASE("inverse transform clamps and counts out-of-range inputs") {
  std::vector<float> counts{0, 100};
  const auto t = ValueTransform::fit(counts);
  std::vector<float> ys{-1.2f, -1.01f, 0.0f, 1.02f, 1.2f};
  std::vector<float> out(ys.size());
  const int warned = t.inverse_grid(ys, out);
  REQUIRE(warned == 2);  // only beyond the 0.05 slack
  for (float v : out) REQUIRE(v >= 0.0f);
  REQUIRE(out[0] == 0.0f);
}

TEST_CASE("standardizer centers and scales the training fields") {
  std::vector<ParticleConditions> conds;
  for (int i = 0; i < 50; ++i) conds.push_back(make_cond(100.0f + 3.0f * i));
  const auto s = Standardizer::fit(conds);
  double sum = 0, sumsq = 0;
  for (const auto& c : conds) {
    const auto a = s.apply(c);
    sum += a[0];
    sumsq += a[0] * a[0];
  }
  REQUIRE(std::abs(sum / 50.0) < 1e-4);
  REQUIRE(std::abs(sumsq / 50.0 - 1.0) < 1e-3);
  // constant fields pass through unscaled rather than dividing by ~0
  const auto a = s.apply(conds[0]);
  REQUIRE(std::isfinite(a[1]));
  REQUIRE(std::isfinite(a[2]));
}

// ---------------------------------------------------------------------
// Archive round trip and schema errors
// ---------------------------------------------------------------------

TEST_CASE("archive round trip preserves a synthetic dataset") {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::zn();
  cfg.n_samples = 10;
  cfg.seed = 7;
  const auto synth = synthesize(cfg);
  const auto path = tmp_path("moecalo_roundtrip.h5");
  save_archive(path, synth.data);
  const auto [conds, ds] = load_dataset(path, CalorimeterSpec::zn());
  REQUIRE(conds.size() == 10);
  REQUIRE(ds.size() == 10);
  REQUIRE(ds.responses == synth.data.responses);
  for (std::size_t i = 0; i < conds.size(); ++i)
    REQUIRE(conds[i] == synth.data.conditions[i]);
  std::filesystem::remove(path);
}

TEST_CASE("identical synth configs give byte-identical archives") {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::t16();
  cfg.n_samples = 24;
  cfg.seed = 99;
  const auto a = tmp_path("moecalo_det_a.h5");
  const auto b = tmp_path("moecalo_det_b.h5");
  save_archive(a, synthesize(cfg).data);
  save_archive(b, synthesize(cfg).data);
  REQUIRE(same_bytes(a, b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("archive with wrong response shape names the expected one") {
  const auto path = tmp_path("moecalo_badshape.h5");
  {
    auto f = h5::File::create(path);
    std::vector<float> conds(2 * kCondDim, 1.0f);
    const std::uint64_t cd[2] = {2, kCondDim};
    f.write_f32("/conditions", conds, cd);
    std::vector<float> resp(2 * 44 * 43, 0.0f);
    const std::uint64_t rd[3] = {2, 44, 43};
    f.write_f32("/responses", resp, rd);
    f.write_attr("detector", std::string("ZN"));
    f.write_attr("format_version", std::int64_t{1});
  }
  try {
    load_archive(path, CalorimeterSpec::zn());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    REQUIRE(std::string(e.what()).find("(44,44)") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("archive with a negative pixel names the sample index") {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::t16();
  cfg.n_samples = 4;
  cfg.seed = 1;
  auto synth = synthesize(cfg);
  synth.data.responses[2 * static_cast<std::size_t>(cfg.spec.pixels()) + 5] = -1.0f;
  const auto path = tmp_path("moecalo_negpix.h5");
  {
    // bypass save-side validation by writing the arrays directly
    auto f = h5::File::create(path);
    std::vector<float> flat(synth.data.size() * kCondDim);
    for (std::size_t i = 0; i < synth.data.size(); ++i) {
      const auto a = synth.data.conditions[i].to_array();
      std::copy(a.begin(), a.end(), flat.begin() + static_cast<std::ptrdiff_t>(i * kCondDim));
    }
    const std::uint64_t cd[2] = {4, kCondDim};
    f.write_f32("/conditions", flat, cd);
    const std::uint64_t rd[3] = {4, 16, 16};
    f.write_f32("/responses", synth.data.responses, rd);
    f.write_attr("detector", std::string("T16"));
    f.write_attr("format_version", std::int64_t{1});
  }
  try {
    load_archive(path, CalorimeterSpec::t16());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("negative") != std::string::npos);
    REQUIRE(msg.find("sample 2") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("archive missing the responses dataset is a schema error") {
  const auto path = tmp_path("moecalo_missing.h5");
  {
    auto f = h5::File::create(path);
    std::vector<float> conds(kCondDim, 1.0f);
    const std::uint64_t cd[2] = {1, kCondDim};
    f.write_f32("/conditions", conds, cd);
    f.write_attr("detector", std::string("ZN"));
    f.write_attr("format_version", std::int64_t{1});
  }
  try {
    load_archive(path, CalorimeterSpec::zn());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    REQUIRE(std::string(e.what()).find("/responses") != std::string::npos);
  }
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------

TEST_CASE("split is deterministic, disjoint and covering") {
  const auto s = split(10, 0.8, 0);
  REQUIRE(s.train_ids.size() == 8);
  REQUIRE(s.test_ids.size() == 2);
  const auto s2 = split(10, 0.8, 0);
  REQUIRE(s.train_ids == s2.train_ids);
  REQUIRE(s.test_ids == s2.test_ids);

  std::set<int> all(s.train_ids.begin(), s.train_ids.end());
  for (int id : s.test_ids) REQUIRE(all.insert(id).second);
  REQUIRE(all.size() == 10);

  REQUIRE(split(100000, 0.8, 3).train_ids.size() == 80000);
  REQUIRE_THROWS_AS(split(1, 0.8, 0), ValidationError);
  REQUIRE_THROWS_AS(split(10, 1.0, 0), ValidationError);
}

// ---------------------------------------------------------------------
// Preprocess tables
// ---------------------------------------------------------------------

TEST_CASE("tables on a single 2x2 sample") {
  std::vector<ParticleConditions> conds{make_cond(1.0f)};
  std::vector<float> resp{1, 2, 3, 4};
  const auto t = build_preprocess_tables(conds, resp, 2, 2);
  REQUIRE(t.intensity[0] == 10.0);
  REQUIRE(t.peak_row[0] == 1);
  REQUIRE(t.peak_col[0] == 1);
  REQUIRE(t.diversity_scale[0] == 0.0);  // singleton group
}

TEST_CASE("tables on one duplicated conditioning group: zeros vs ones") {
  // per-pixel std over {0,1} with population denominator 2 is 0.5;
  // summed over 4 pixels the raw group value is 2.0, and the lone nonzero
  // group min-max normalizes to exactly 1.
  std::vector<ParticleConditions> conds{make_cond(5.0f), make_cond(5.0f)};
  std::vector<float> resp{0, 0, 0, 0, 1, 1, 1, 1};
  const auto t = build_preprocess_tables(conds, resp, 2, 2);
  REQUIRE(t.diversity_scale[0] == 1.0);
  REQUIRE(t.diversity_scale[1] == 1.0);
}

TEST_CASE("uniform image peaks at the row-major first pixel") {
  std::vector<ParticleConditions> conds{make_cond(1.0f)};
  std::vector<float> resp{7, 7, 7, 7, 7, 7};
  const auto t = build_preprocess_tables(conds, resp, 2, 3);
  REQUIRE(t.peak_row[0] == 0);
  REQUIRE(t.peak_col[0] == 0);
}

TEST_CASE("table invariants over a synthetic dataset") {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::t16();
  cfg.n_samples = 64;
  cfg.seed = 5;
  const auto synth = synthesize(cfg);
  const auto t = build_preprocess_tables(synth.data);
  const auto p = static_cast<std::size_t>(cfg.spec.pixels());
  for (std::size_t i = 0; i < synth.data.size(); ++i) {
    // intensity equals the pixel sum, recomputed in the same order
    double sum = 0;
    for (std::size_t j = 0; j < p; ++j) sum += synth.data.responses[i * p + j];
    REQUIRE(t.intensity[i] == sum);
    // the peak indexes a maximal pixel and no earlier pixel ties it
    const auto arg = static_cast<std::size_t>(t.peak_row[i]) * 16 +
                     static_cast<std::size_t>(t.peak_col[i]);
    const float peak = synth.data.responses[i * p + arg];
    for (std::size_t j = 0; j < p; ++j) {
      REQUIRE(synth.data.responses[i * p + j] <= peak);
      if (j < arg) REQUIRE(synth.data.responses[i * p + j] < peak);
    }
    REQUIRE(t.diversity_scale[i] >= 0.0);
    REQUIRE(t.diversity_scale[i] <= 1.0);
  }
}

TEST_CASE("diversity scale is invariant to permuting samples within a group") {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::t16();
  cfg.n_samples = 12;
  cfg.seed = 21;
  const auto synth = synthesize(cfg);
  const auto t1 = build_preprocess_tables(synth.data);

  // swap each duplicate pair in place
  Dataset swapped = synth.data;
  const auto p = static_cast<std::size_t>(cfg.spec.pixels());
  for (std::size_t i = 0; i + 1 < swapped.size(); i += 2) {
    std::swap_ranges(swapped.responses.begin() + static_cast<std::ptrdiff_t>(i * p),
                     swapped.responses.begin() + static_cast<std::ptrdiff_t>((i + 1) * p),
                     swapped.responses.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
  }
  const auto t2 = build_preprocess_tables(swapped);
  for (std::size_t i = 0; i + 1 < synth.data.size(); i += 2) {
    REQUIRE(t1.diversity_scale[i] == t2.diversity_scale[i]);
    REQUIRE(t1.diversity_scale[i + 1] == t2.diversity_scale[i + 1]);
  }
}
