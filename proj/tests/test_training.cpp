// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "moecalo/checkpoint.hpp"
#include "moecalo/synthgen.hpp"
#include "moecalo/training.hpp"

using namespace moecalo;

namespace {

std::string tmp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

SynthConfig small_synth(int n, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.spec = CalorimeterSpec::t16();
  cfg.n_samples = n;
  cfg.seed = seed;
  cfg.intensity_ranges = {{{20.0, 60.0}, {90.0, 180.0}, {300.0, 600.0}}};
  cfg.spread_ranges = {{{4.0, 6.0}, {2.0, 3.5}, {1.0, 1.8}}};
  return cfg;
}

TrainConfig small_train(int n_experts, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.n_experts = n_experts;
  cfg.batch_size = 32;
  cfg.epochs = 2;
  cfg.seed = seed;
  cfg.spec = CalorimeterSpec::t16();
  cfg.sizes = ModelSizes::reduced();
  return cfg;
}

std::uint64_t hash_params(std::vector<Tensor<float>*> params) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (auto* p : params)
    for (float f : p->v) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  return h;
}

std::uint64_t hash_expert(Expert<float>& e) {
  auto ps = e.gen.params();
  for (auto* p : e.disc.params()) ps.push_back(p);
  for (auto* p : e.aux.params()) ps.push_back(p);
  return hash_params(ps);
}

std::vector<int> iota_rows(int n) {
  std::vector<int> r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("first step routes everything to expert 0; others skip") {
  const auto synth = synthesize(small_synth(64, 1));
  TrainState state(synth.data, small_train(3, 1));

  const auto h1 = hash_expert(state.bundle().experts[1]);
  const auto h2 = hash_expert(state.bundle().experts[2]);
  const auto m = state.train_step(iota_rows(32));

  // zero-initialized router head gates uniformly; ties break to expert 0
  REQUIRE(m.expert_counts[0] == 32);
  REQUIRE(m.expert_counts[1] == 0);
  REQUIRE(m.expert_counts[2] == 0);
  // experts with empty sub-batches are untouched
  REQUIRE(hash_expert(state.bundle().experts[1]) == h1);
  REQUIRE(hash_expert(state.bundle().experts[2]) == h2);
  // hard-routing conservation
  int total = 0;
  for (int c : m.expert_counts) total += c;
  REQUIRE(total == 32);
}

TEST_CASE("router update leaves expert parameters alone and vice versa") {
  const auto synth = synthesize(small_synth(64, 2));

  // Run A: full step. Run B: identical state, router frozen.
  TrainState a(synth.data, small_train(3, 2));
  TrainState b(synth.data, small_train(3, 2));
  b.freeze_router(true);

  const auto router_before = hash_params(a.bundle().router.params());
  a.train_step(iota_rows(32));
  b.train_step(iota_rows(32));

  // expert updates are identical whether or not the router stepped after
  for (int e = 0; e < 3; ++e)
    REQUIRE(hash_expert(a.bundle().experts[static_cast<std::size_t>(e)]) ==
            hash_expert(b.bundle().experts[static_cast<std::size_t>(e)]));
  // the full step moved the router; the frozen step did not
  REQUIRE(hash_params(a.bundle().router.params()) != router_before);
  REQUIRE(hash_params(b.bundle().router.params()) == router_before);
}

TEST_CASE("a MoE step equals independent expert steps on the hard partition") {
  const auto synth = synthesize(small_synth(96, 3));

  TrainState a(synth.data, small_train(3, 3));
  TrainState b(synth.data, small_train(3, 3));
  a.freeze_router(true);
  b.freeze_router(true);

  // steer the router head so the partition is nontrivial
  auto steer = [](TrainState& s) {
    auto params = s.bundle().router.params();
    auto& head_w = *params[4];  // head weight (n_experts x hidden)
    auto& head_b = *params[5];
    head_b(0) = 0.0f;
    head_b(1) = 0.0f;
    head_b(2) = 0.0f;
    for (std::int64_t j = 0; j < head_w.dim(1); ++j) {
      head_w(0, j) = j % 3 == 0 ? 0.8f : -0.2f;
      head_w(1, j) = j % 3 == 1 ? 0.8f : -0.2f;
      head_w(2, j) = j % 3 == 2 ? 0.8f : -0.2f;
    }
  };
  steer(a);
  steer(b);

  const auto rows = iota_rows(48);
  const auto m = a.train_step(rows);
  REQUIRE(m.expert_counts[0] > 0);
  REQUIRE(m.expert_counts[1] > 0);
  REQUIRE(m.expert_counts[2] > 0);

  // replay the same hard partition as three independent GAN updates
  for (int e = 0; e < 3; ++e) {
    std::vector<int> sub;
    for (int b_idx : rows)
      if (m.assignment[static_cast<std::size_t>(b_idx)] == e) sub.push_back(b_idx);
    b.expert_step(e, sub);
  }
  b.advance_step();

  for (int e = 0; e < 3; ++e)
    REQUIRE(hash_expert(a.bundle().experts[static_cast<std::size_t>(e)]) ==
            hash_expert(b.bundle().experts[static_cast<std::size_t>(e)]));
}

TEST_CASE("single-expert config degenerates to plain GAN training") {
  const auto synth = synthesize(small_synth(64, 4));
  TrainState state(synth.data, small_train(1, 4));
  const auto m = state.train_step(iota_rows(32));
  REQUIRE(m.expert_counts.size() == 1);
  REQUIRE(m.expert_counts[0] == 32);
  REQUIRE(m.l_diff == 0.0);  // differentiation needs >= 2 experts
  REQUIRE(m.l_util == 0.0);
  REQUIRE(std::isfinite(m.loss_g));
}

TEST_CASE("train_step rejects undersized batches and poisoned parameters") {
  const auto synth = synthesize(small_synth(64, 5));
  TrainState state(synth.data, small_train(2, 5));
  std::vector<int> one{0};
  REQUIRE_THROWS_AS(state.train_step(one), ValidationError);

  // poison the generator's output-layer bias (downstream of any ReLU that
  // would swallow the NaN); the next step must name the broken term
  auto params = state.bundle().experts[0].gen.params();
  auto& conv_bias = *params[params.size() - 3];
  REQUIRE(conv_bias.numel() == 1);
  conv_bias(0) = std::numeric_limits<float>::quiet_NaN();
  try {
    state.train_step(iota_rows(8));
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    REQUIRE(std::string(e.what()).find("loss") != std::string::npos);
  }
}

TEST_CASE("training runs deterministically end to end") {
  const auto synth = synthesize(small_synth(200, 6));
  auto cfg = small_train(3, 6);
  cfg.epochs = 2;

  const auto d1 = tmp_dir("moecalo_train_a");
  const auto d2 = tmp_dir("moecalo_train_b");
  const auto r1 = train(synth.data, cfg, d1);
  const auto r2 = train(synth.data, cfg, d2);

  REQUIRE(r1.report.size() == 2);
  for (std::size_t e = 0; e < r1.report.size(); ++e) {
    REQUIRE(r1.report[e].loss_g == r2.report[e].loss_g);
    REQUIRE(r1.report[e].loss_d == r2.report[e].loss_d);
    REQUIRE(r1.report[e].util_per_expert == r2.report[e].util_per_expert);
    REQUIRE(r1.report[e].mean_intensity_per_expert ==
            r2.report[e].mean_intensity_per_expert);
  }

  // byte-identical checkpoints and reports
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  REQUIRE(slurp(d1 + "/checkpoint.h5") == slurp(d2 + "/checkpoint.h5"));
  REQUIRE(slurp(d1 + "/report.jsonl") == slurp(d2 + "/report.jsonl"));
  REQUIRE(!slurp(d1 + "/report.jsonl").empty());

  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("checkpoint round trip reproduces generation bit-exactly") {
  const auto synth = synthesize(small_synth(120, 7));
  auto cfg = small_train(3, 7);
  cfg.epochs = 1;
  const auto dir = tmp_dir("moecalo_ckpt");
  const auto result = train(synth.data, cfg, dir);

  auto reloaded = load_checkpoint(result.checkpoint_path);
  REQUIRE(reloaded->n_experts == 3);
  REQUIRE(reloaded->spec == CalorimeterSpec::t16());
  REQUIRE(reloaded->epoch == 1);

  // regenerate from the in-memory state via a fresh load and compare
  auto again = load_checkpoint(result.checkpoint_path);
  const auto conds = synthesize_conditions(small_synth(32, 8));
  GenerationTrace tr1, tr2;
  const auto g1 = generate_responses(*reloaded, conds, 99, &tr1);
  const auto g2 = generate_responses(*again, conds, 99, &tr2);
  REQUIRE(g1 == g2);
  REQUIRE(tr1.expert_ids == tr2.expert_ids);

  // contract: right shape, nonnegative pixels, deterministic reruns
  REQUIRE(g1.size() == conds.size() * 256);
  for (float v : g1) REQUIRE(v >= 0.0f);
  const auto g3 = generate_responses(*reloaded, conds, 99);
  REQUIRE(g1 == g3);
  const auto g4 = generate_responses(*reloaded, conds, 100);
  REQUIRE(g1 != g4);  // a different seed draws different noise

  std::filesystem::remove_all(dir);
}

TEST_CASE("train validates dataset spec and unwritable output directories") {
  const auto synth = synthesize(small_synth(32, 9));
  auto cfg = small_train(2, 9);
  cfg.spec = CalorimeterSpec::zn();  // mismatch
  REQUIRE_THROWS_AS(train(synth.data, cfg, ""), ValidationError);
}
