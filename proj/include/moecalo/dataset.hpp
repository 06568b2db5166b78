// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk archive schema, loading/validation, train/test splitting and the
// preprocessing tables (per-sample diversity scale, intensity, peak
// coordinates) consumed by the training losses.
//
// Archive layout (format_version 1):
//   /conditions  N x 9   float32  (energy, mass, charge, pos_xyz, mom_xyz)
//   /responses   N x H x W float32
//   root attrs: "detector" ("ZP"|"ZN"|"T16"), "format_version" (= 1)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moecalo/detector.hpp"
#include "moecalo/errors.hpp"
#include "moecalo/hdf5_io.hpp"
#include "moecalo/rng.hpp"
#include "moecalo/version.hpp"

namespace moecalo {

/// In-memory dataset: conditioning vectors plus contiguous N*H*W pixels.
struct Dataset {
  CalorimeterSpec spec;
  std::vector<ParticleConditions> conditions;
  std::vector<float> responses;  // N * H * W, row-major

  std::size_t size() const { return conditions.size(); }

  std::span<const float> response(std::size_t i) const {
    const auto p = static_cast<std::size_t>(spec.pixels());
    return {responses.data() + i * p, p};
  }

  ResponseView response_view(std::size_t i) const {
    return {responses.data() + i * static_cast<std::size_t>(spec.pixels()),
            spec.height, spec.width};
  }

  /// Copies a subset (by index) into a new dataset, order preserved.
  Dataset subset(std::span<const int> ids) const {
    Dataset out;
    out.spec = spec;
    out.conditions.reserve(ids.size());
    out.responses.reserve(ids.size() * static_cast<std::size_t>(spec.pixels()));
    for (int id : ids) {
      out.conditions.push_back(conditions[static_cast<std::size_t>(id)]);
      const auto r = response(static_cast<std::size_t>(id));
      out.responses.insert(out.responses.end(), r.begin(), r.end());
    }
    return out;
  }
};

/// Validates shapes and values; throws SchemaError naming the offending
/// array and sample index.
inline void validate_dataset(const Dataset& ds) {
  if (ds.responses.size() !=
      ds.conditions.size() * static_cast<std::size_t>(ds.spec.pixels()))
    throw SchemaError("responses: expected " + std::to_string(ds.conditions.size()) +
                      " x " + std::to_string(ds.spec.height) + " x " +
                      std::to_string(ds.spec.width) + " values, got " +
                      std::to_string(ds.responses.size()));
  for (std::size_t i = 0; i < ds.conditions.size(); ++i) {
    if (!ds.conditions[i].valid())
      throw SchemaError("conditions: invalid values at sample " + std::to_string(i));
  }
  const auto p = static_cast<std::size_t>(ds.spec.pixels());
  for (std::size_t i = 0; i < ds.conditions.size(); ++i) {
    const float* px = ds.responses.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(px[j]))
        throw SchemaError("responses: non-finite pixel at sample " + std::to_string(i));
      if (px[j] < 0.0f)
        throw SchemaError("responses: negative pixel at sample " + std::to_string(i));
    }
  }
}

inline void save_archive(const std::string& path, const Dataset& ds) {
  auto f = h5::File::create(path);
  const auto n = static_cast<std::uint64_t>(ds.size());
  std::vector<float> flat(n * kCondDim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto a = ds.conditions[i].to_array();
    std::copy(a.begin(), a.end(), flat.begin() + static_cast<std::ptrdiff_t>(i * kCondDim));
  }
  const std::uint64_t cd[2] = {n, kCondDim};
  f.write_f32("/conditions", flat, cd);
  const std::uint64_t rd[3] = {n, static_cast<std::uint64_t>(ds.spec.height),
                               static_cast<std::uint64_t>(ds.spec.width)};
  f.write_f32("/responses", ds.responses, rd);
  f.write_attr("detector", std::string(ds.spec.name()));
  f.write_attr("format_version", static_cast<std::int64_t>(kFormatVersion));
}

/// Loads and validates an archive; `expected` guards against detector
/// mixups (pass the spec you intend to train/evaluate on).
inline Dataset load_archive(const std::string& path, const CalorimeterSpec& expected) {
  auto f = h5::File::open_readonly(path);
  if (!f.has_attr("format_version"))
    throw SchemaError("missing attribute format_version in " + path);
  const auto ver = f.read_attr_i64("format_version");
  if (ver != kFormatVersion)
    throw SchemaError("unsupported format_version " + std::to_string(ver) + " in " + path);
  const auto det = f.read_attr_string("detector");
  const auto spec = CalorimeterSpec::from_name(det);
  if (!(spec == expected))
    throw SchemaError("detector mismatch: archive has " + det + ", expected " +
                      expected.name());
  if (!f.has_dataset("/conditions"))
    throw SchemaError("missing dataset /conditions in " + path);
  if (!f.has_dataset("/responses"))
    throw SchemaError("missing dataset /responses in " + path);

  const auto cdims = f.dataset_dims("/conditions");
  if (cdims.size() != 2 || cdims[1] != kCondDim)
    throw SchemaError("/conditions: expected shape (N, 9)");
  const auto rdims = f.dataset_dims("/responses");
  if (rdims.size() != 3 || rdims[0] != cdims[0])
    throw SchemaError("/responses: expected shape (N, H, W) with N matching /conditions");
  if (rdims[1] != static_cast<std::uint64_t>(spec.height) ||
      rdims[2] != static_cast<std::uint64_t>(spec.width))
    throw SchemaError("/responses: shape (" + std::to_string(rdims[1]) + "," +
                      std::to_string(rdims[2]) + ") does not match expected (" +
                      std::to_string(spec.height) + "," + std::to_string(spec.width) +
                      ")");

  Dataset ds;
  ds.spec = spec;
  const auto flat = f.read_f32("/conditions");
  ds.conditions.resize(cdims[0]);
  for (std::size_t i = 0; i < ds.conditions.size(); ++i)
    ds.conditions[i] = ParticleConditions::from_array(
        std::span<const float>(flat.data() + i * kCondDim, kCondDim));
  ds.responses = f.read_f32("/responses");
  validate_dataset(ds);
  return ds;
}

/// Load operation from the module contract: returns the validated pair.
inline std::pair<std::vector<ParticleConditions>, Dataset> load_dataset(
    const std::string& path, const CalorimeterSpec& spec) {
  Dataset ds = load_archive(path, spec);
  return {ds.conditions, std::move(ds)};
}

// ---------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------

struct SplitIndex {
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::uint64_t seed = 0;
};

/// Deterministic shuffled split. |train| = round(ratio*n), clamped so both
/// sides are nonempty.
inline SplitIndex split(int n, double ratio, std::uint64_t seed) {
  if (n < 2) throw ValidationError("split: need at least 2 samples");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ValidationError("split: ratio must be in (0, 1)");
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  auto rng = Rng::keyed(seed, Stream::Split);
  rng.shuffle(ids);
  auto n_train = static_cast<std::int64_t>(std::llround(ratio * n));
  n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
  SplitIndex out;
  out.seed = seed;
  out.train_ids.assign(ids.begin(), ids.begin() + n_train);
  out.test_ids.assign(ids.begin() + n_train, ids.end());
  return out;
}

// ---------------------------------------------------------------------
// Preprocessing tables
// ---------------------------------------------------------------------

/// Per-sample quantities computed once before training.
struct PreprocessTables {
  std::vector<double> diversity_scale;  // in [0,1]
  std::vector<double> intensity;        // pixel sum
  std::vector<int> peak_row, peak_col;  // argmax, row-major first on ties
};

namespace detail {

/// Bitwise key for exact conditioning-group matching.
struct CondKey {
  std::array<std::uint32_t, kCondDim> bits;
  bool operator<(const CondKey& o) const { return bits < o.bits; }
};

inline CondKey cond_key(const ParticleConditions& c) {
  CondKey k{};
  const auto a = c.to_array();
  for (int j = 0; j < kCondDim; ++j) {
    std::uint32_t b;
    std::memcpy(&b, &a[static_cast<std::size_t>(j)], sizeof(b));
    k.bits[static_cast<std::size_t>(j)] = b;
  }
  return k;
}

}  // namespace detail

/// Builds the tables from raw arrays (responses are n grids of h*w pixels,
/// flattened row-major).
///
/// diversity_scale: for each group of samples sharing the conditioning
/// vector bitwise-exactly, compute sum_ij of the per-pixel population
/// standard deviation across the group, then min-max normalize the group
/// values to [0,1] across groups. Singleton groups have zero variance and
/// therefore scale 0 whenever any group varies; if all groups tie at a
/// positive value the scale is 1.
inline PreprocessTables build_preprocess_tables(
    std::span<const ParticleConditions> conditions,
    std::span<const float> responses, int height, int width) {
  const std::size_t n = conditions.size();
  if (n == 0) throw ValidationError("build_preprocess_tables: empty dataset");
  const auto p = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (responses.size() != n * p)
    throw ValidationError("build_preprocess_tables: responses/conditions mismatch");
  PreprocessTables t;
  t.diversity_scale.resize(n);
  t.intensity.resize(n);
  t.peak_row.resize(n);
  t.peak_col.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const float* px = responses.data() + i * p;
    double sum = 0.0;
    std::size_t arg = 0;
    float best = px[0];
    for (std::size_t j = 0; j < p; ++j) {
      sum += px[j];
      if (px[j] > best) {  // strict: ties keep the earliest (row-major) pixel
        best = px[j];
        arg = j;
      }
    }
    t.intensity[i] = sum;
    t.peak_row[i] = static_cast<int>(arg) / width;
    t.peak_col[i] = static_cast<int>(arg) % width;
  }

  // Group samples by exact conditioning value.
  std::map<detail::CondKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i)
    groups[detail::cond_key(conditions[i])].push_back(i);

  std::vector<double> raw(groups.size(), 0.0);
  std::size_t gi = 0;
  for (const auto& [key, members] : groups) {
    if (members.size() >= 2) {
      double acc = 0.0;
      const double m = static_cast<double>(members.size());
      for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t idx : members) {
          const double v = responses[idx * p + j];
          s += v;
          s2 += v * v;
        }
        const double mu = s / m;
        acc += std::sqrt(std::max(s2 / m - mu * mu, 0.0));
      }
      raw[gi] = acc;
    }
    ++gi;
  }

  const auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *mn_it, mx = *mx_it;
  gi = 0;
  for (const auto& [key, members] : groups) {
    double scale;
    if (mx > mn)
      scale = (raw[gi] - mn) / (mx - mn);
    else
      scale = raw[gi] > 0.0 ? 1.0 : 0.0;
    if (members.size() < 2) scale = 0.0;
    for (std::size_t idx : members) t.diversity_scale[idx] = scale;
    ++gi;
  }
  return t;
}

inline PreprocessTables build_preprocess_tables(const Dataset& ds) {
  return build_preprocess_tables(ds.conditions, ds.responses, ds.spec.height,
                                 ds.spec.width);
}

}  // namespace moecalo
