// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocol: photomultiplier channel decomposition,
// Wasserstein-1 distances per channel and per intensity quartile,
// expert specialization statistics, histogram export and an
// inference-time benchmark.
//
// Channel map (bit-exact external contract): pixels with even row+col
// parity feed the central photomultiplier; the remaining pixels are
// bundled by image quadrant (rows split at ceil(H/2), columns at
// ceil(W/2)) into PMT1 (top-left), PMT2 (top-right), PMT3 (bottom-left)
// and PMT4 (bottom-right).

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moecalo/checkpoint.hpp"
#include "moecalo/dataset.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/synthgen.hpp"
#include "moecalo/training.hpp"
#include "moecalo/version.hpp"

namespace moecalo {

inline constexpr int kNumChannels = 5;
inline constexpr const char* kChannelNames[kNumChannels] = {"pmtc", "pmt1", "pmt2",
                                                            "pmt3", "pmt4"};

/// Channel index of one pixel: 0 = PMTc, 1..4 = quadrant bundles.
inline int channel_of(int row, int col, int height, int width) {
  if ((row + col) % 2 == 0) return 0;
  const bool top = row < (height + 1) / 2;
  const bool left = col < (width + 1) / 2;
  if (top) return left ? 1 : 2;
  return left ? 3 : 4;
}

struct ChannelVector {
  double pmtc = 0, pmt1 = 0, pmt2 = 0, pmt3 = 0, pmt4 = 0;

  double operator[](int i) const {
    switch (i) {
      case 0: return pmtc;
      case 1: return pmt1;
      case 2: return pmt2;
      case 3: return pmt3;
      default: return pmt4;
    }
  }

  double sum() const { return pmtc + pmt1 + pmt2 + pmt3 + pmt4; }
};

inline ChannelVector channel_split(std::span<const float> pixels, int height,
                                   int width) {
  if (pixels.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw ValidationError("channel_split: pixel count does not match shape");
  double acc[kNumChannels] = {0, 0, 0, 0, 0};
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      acc[channel_of(r, c, height, width)] +=
          pixels[static_cast<std::size_t>(r * width + c)];
  return {acc[0], acc[1], acc[2], acc[3], acc[4]};
}

inline ChannelVector channel_split(std::span<const float> pixels,
                                   const CalorimeterSpec& spec) {
  return channel_split(pixels, spec.height, spec.width);
}

// ---------------------------------------------------------------------
// Wasserstein-1
// ---------------------------------------------------------------------

/// Empirical 1-Wasserstein distance. Equal sizes reduce to the mean
/// absolute difference of sorted samples; unequal sizes use the
/// empirical-CDF integral.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("wasserstein1: empty input");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  // Integrate |F_a(t) - F_b(t)| dt over the merged support.
  const double step_a = 1.0 / static_cast<double>(a.size());
  const double step_b = 1.0 / static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double fa = 0.0, fb = 0.0, acc = 0.0;
  double prev = std::min(a[0], b[0]);
  while (ia < a.size() || ib < b.size()) {
    double t;
    if (ib >= b.size() || (ia < a.size() && a[ia] <= b[ib]))
      t = a[ia];
    else
      t = b[ib];
    acc += std::abs(fa - fb) * (t - prev);
    prev = t;
    while (ia < a.size() && a[ia] == t) {
      fa += step_a;
      ++ia;
    }
    while (ib < b.size() && b[ib] == t) {
      fb += step_b;
      ++ib;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------

struct ChannelHistogram {
  std::vector<double> bin_lo, bin_hi;
  std::vector<long> real_count, gen_count;
};

struct ExpertStat {
  double mean = 0, stdev = 0;
  long count = 0;
};

struct EvalReport {
  std::string detector;
  int n_test = 0;
  std::array<double, kNumChannels> ws_per_channel{};
  double ws_mean = 0;
  std::array<double, 4> ws_quartiles{};
  std::vector<ExpertStat> expert_stats;
  double timing_seconds_per_10k = 0;
  std::array<ChannelHistogram, kNumChannels> histograms;

  nlohmann::json to_json() const {
    nlohmann::json j{{"format_version", kFormatVersion},
                     {"detector", detector},
                     {"n_test", n_test},
                     {"ws_per_channel", ws_per_channel},
                     {"ws_mean", ws_mean},
                     {"ws_quartiles", ws_quartiles},
                     {"timing_seconds_per_10k", timing_seconds_per_10k}};
    j["expert_stats"] = nlohmann::json::array();
    for (const auto& s : expert_stats)
      j["expert_stats"].push_back(
          {{"mean", s.mean}, {"std", s.stdev}, {"count", s.count}});
    j["histograms"] = nlohmann::json::object();
    for (int c = 0; c < kNumChannels; ++c)
      j["histograms"][kChannelNames[c]] = {
          {"bin_lo", histograms[static_cast<std::size_t>(c)].bin_lo},
          {"bin_hi", histograms[static_cast<std::size_t>(c)].bin_hi},
          {"real_count", histograms[static_cast<std::size_t>(c)].real_count},
          {"gen_count", histograms[static_cast<std::size_t>(c)].gen_count}};
    return j;
  }
};

namespace detail {

inline ChannelHistogram make_histogram(std::span<const double> real,
                                       std::span<const double> gen, int bins) {
  ChannelHistogram h;
  double lo = 1e300, hi = -1e300;
  for (double v : real) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : gen) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) hi = lo + 1.0;  // degenerate pooled range
  const double width = (hi - lo) / bins;
  h.bin_lo.resize(static_cast<std::size_t>(bins));
  h.bin_hi.resize(static_cast<std::size_t>(bins));
  h.real_count.assign(static_cast<std::size_t>(bins), 0);
  h.gen_count.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i < bins; ++i) {
    h.bin_lo[static_cast<std::size_t>(i)] = lo + i * width;
    h.bin_hi[static_cast<std::size_t>(i)] = i + 1 == bins ? hi : lo + (i + 1) * width;
  }
  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / width);
    return std::clamp(b, 0, bins - 1);  // top edge lands in the last bin
  };
  for (double v : real) ++h.real_count[static_cast<std::size_t>(bin_of(v))];
  for (double v : gen) ++h.gen_count[static_cast<std::size_t>(bin_of(v))];
  return h;
}

}  // namespace detail

/// Full evaluation pass: one generated response per test condition, then
/// channel-level WS distances, equal-count intensity quartiles, expert
/// statistics from the routing trace, and per-channel histograms.
inline EvalReport evaluate(ModelBundle& bundle, const Dataset& test,
                           std::uint64_t seed, int bins = 64) {
  if (!(test.spec == bundle.spec))
    throw ValidationError("evaluate: dataset detector does not match checkpoint");
  if (test.size() == 0) throw ValidationError("evaluate: empty test set");
  const int n = static_cast<int>(test.size());
  const int P = bundle.spec.pixels();

  EvalReport rep;
  rep.detector = bundle.spec.name();
  rep.n_test = n;

  GenerationTrace trace;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<float> gen = generate_responses(bundle, test.conditions, seed, &trace);
  const double gen_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.timing_seconds_per_10k = gen_seconds * 10000.0 / n;

  // Channel decomposition of both sets.
  std::array<std::vector<double>, kNumChannels> real_ch, gen_ch;
  for (auto& v : real_ch) v.resize(static_cast<std::size_t>(n));
  for (auto& v : gen_ch) v.resize(static_cast<std::size_t>(n));
  std::vector<double> real_fin(static_cast<std::size_t>(n));
  std::vector<double> gen_fin(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto rv = channel_split(test.response(static_cast<std::size_t>(i)), bundle.spec);
    const auto gv = channel_split(
        std::span<const float>(gen.data() + static_cast<std::size_t>(i) * P,
                               static_cast<std::size_t>(P)),
        bundle.spec);
    for (int c = 0; c < kNumChannels; ++c) {
      real_ch[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] = rv[c];
      gen_ch[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] = gv[c];
    }
    real_fin[static_cast<std::size_t>(i)] = rv.sum();
    gen_fin[static_cast<std::size_t>(i)] = gv.sum();
  }

  double acc = 0.0;
  for (int c = 0; c < kNumChannels; ++c) {
    rep.ws_per_channel[static_cast<std::size_t>(c)] =
        wasserstein1(real_ch[static_cast<std::size_t>(c)], gen_ch[static_cast<std::size_t>(c)]);
    acc += rep.ws_per_channel[static_cast<std::size_t>(c)];
  }
  rep.ws_mean = acc / kNumChannels;

  // Equal-count quartiles over ascending real intensity; each quartile
  // compares the real samples against their matched generated samples.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return real_fin[static_cast<std::size_t>(a)] < real_fin[static_cast<std::size_t>(b)];
  });
  int offset = 0;
  for (int q = 0; q < 4; ++q) {
    const int len = n / 4 + (q < n % 4 ? 1 : 0);
    double qacc = 0.0;
    if (len > 0) {
      for (int c = 0; c < kNumChannels; ++c) {
        std::vector<double> r(static_cast<std::size_t>(len)), g(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) {
          const int idx = order[static_cast<std::size_t>(offset + i)];
          r[static_cast<std::size_t>(i)] = real_ch[static_cast<std::size_t>(c)][static_cast<std::size_t>(idx)];
          g[static_cast<std::size_t>(i)] = gen_ch[static_cast<std::size_t>(c)][static_cast<std::size_t>(idx)];
        }
        qacc += wasserstein1(std::move(r), std::move(g));
      }
      qacc /= kNumChannels;
    }
    rep.ws_quartiles[static_cast<std::size_t>(q)] = qacc;
    offset += len;
  }

  // Specialization statistics from the routing trace.
  rep.expert_stats.assign(static_cast<std::size_t>(bundle.n_experts), {});
  for (int i = 0; i < n; ++i) {
    auto& s = rep.expert_stats[static_cast<std::size_t>(trace.expert_ids[static_cast<std::size_t>(i)])];
    s.mean += gen_fin[static_cast<std::size_t>(i)];
    ++s.count;
  }
  for (auto& s : rep.expert_stats)
    if (s.count > 0) s.mean /= static_cast<double>(s.count);
  for (int i = 0; i < n; ++i) {
    auto& s = rep.expert_stats[static_cast<std::size_t>(trace.expert_ids[static_cast<std::size_t>(i)])];
    const double d = gen_fin[static_cast<std::size_t>(i)] - s.mean;
    s.stdev += d * d;
  }
  for (auto& s : rep.expert_stats)
    s.stdev = s.count > 1 ? std::sqrt(s.stdev / static_cast<double>(s.count)) : 0.0;

  for (int c = 0; c < kNumChannels; ++c)
    rep.histograms[static_cast<std::size_t>(c)] = detail::make_histogram(
        real_ch[static_cast<std::size_t>(c)], gen_ch[static_cast<std::size_t>(c)], bins);
  return rep;
}

/// Writes one CSV per channel: bin_lo,bin_hi,real_count,gen_count.
inline std::vector<std::string> export_histograms(const EvalReport& rep,
                                                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (int c = 0; c < kNumChannels; ++c) {
    const std::string path = dir + "/" + kChannelNames[c] + ".csv";
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write histogram file " + path);
    f << "bin_lo,bin_hi,real_count,gen_count\n";
    const auto& h = rep.histograms[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < h.bin_lo.size(); ++i)
      f << h.bin_lo[i] << "," << h.bin_hi[i] << "," << h.real_count[i] << ","
        << h.gen_count[i] << "\n";
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------
// Inference benchmark
// ---------------------------------------------------------------------

struct BenchResult {
  int n = 0;
  std::string device_label;
  double seconds = 0;          // route + generate wall clock
  double router_seconds = 0;   // routing share of the same pass
  double seconds_per_10k = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"format_version", kFormatVersion},
                          {"n", n},
                          {"device_label", device_label},
                          {"seconds", seconds},
                          {"router_seconds", router_seconds},
                          {"router_share", seconds > 0 ? router_seconds / seconds : 0.0},
                          {"seconds_per_10k", seconds_per_10k}};
  }
};

/// Wall-clock timing of route+generate for n responses after one warm-up
/// batch. Conditions are synthesized on the bundle's own spec.
inline BenchResult benchmark_inference(ModelBundle& bundle, int n,
                                       const std::string& device_label,
                                       std::uint64_t seed = 20) {
  if (n < 1) throw ValidationError("benchmark_inference: n must be >= 1");
  SynthConfig scfg;
  scfg.spec = bundle.spec;
  scfg.n_samples = n;
  scfg.seed = seed;
  const auto conditions = synthesize_conditions(scfg);

  // Warm-up pass over a small prefix.
  const int warm = std::min(n, 256);
  generate_responses(bundle,
                     std::span<const ParticleConditions>(conditions.data(),
                                                         static_cast<std::size_t>(warm)),
                     seed + 1);

  BenchResult res;
  res.n = n;
  res.device_label = device_label;
  const auto t0 = std::chrono::steady_clock::now();
  generate_responses(bundle, conditions, seed, nullptr, &res.router_seconds);
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.seconds_per_10k = res.seconds * 10000.0 / n;
  return res;
}

}  // namespace moecalo
