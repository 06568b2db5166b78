// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "moecalo/errors.hpp"

namespace moecalo {

inline constexpr int kCondDim = 9;

/// Calorimeter profiles. ZP and ZN are the production devices; T16 is a
/// reduced 16x16 profile for desk-scale runs and tests.
enum class Detector : std::uint8_t { ZP, ZN, T16 };

struct CalorimeterSpec {
  Detector det = Detector::ZN;
  int height = 44;
  int width = 44;

  static CalorimeterSpec zp() { return {Detector::ZP, 56, 30}; }
  static CalorimeterSpec zn() { return {Detector::ZN, 44, 44}; }
  static CalorimeterSpec t16() { return {Detector::T16, 16, 16}; }

  static CalorimeterSpec from_name(std::string_view name) {
    if (name == "ZP") return zp();
    if (name == "ZN") return zn();
    if (name == "T16") return t16();
    throw ValidationError("unknown detector name: " + std::string(name));
  }

  const char* name() const {
    switch (det) {
      case Detector::ZP: return "ZP";
      case Detector::ZN: return "ZN";
      case Detector::T16: return "T16";
    }
    return "?";
  }

  int pixels() const { return height * width; }

  bool operator==(const CalorimeterSpec&) const = default;
};

/// The 9-variable conditioning vector attached to each response.
/// Order matches the archive column layout.
struct ParticleConditions {
  float energy = 0.0f;  // GeV
  float mass = 0.0f;    // GeV/c^2
  float charge = 0.0f;  // elementary-charge units
  float pos_x = 0.0f, pos_y = 0.0f, pos_z = 0.0f;  // detector frame, cm
  float mom_x = 0.0f, mom_y = 0.0f, mom_z = 0.0f;  // GeV/c

  std::array<float, kCondDim> to_array() const {
    return {energy, mass, charge, pos_x, pos_y, pos_z, mom_x, mom_y, mom_z};
  }

  static ParticleConditions from_array(std::span<const float> a) {
    ParticleConditions c;
    c.energy = a[0]; c.mass = a[1]; c.charge = a[2];
    c.pos_x = a[3]; c.pos_y = a[4]; c.pos_z = a[5];
    c.mom_x = a[6]; c.mom_y = a[7]; c.mom_z = a[8];
    return c;
  }

  bool valid() const {
    for (float f : to_array())
      if (!std::isfinite(f)) return false;
    return energy >= 0.0f && mass >= 0.0f;
  }

  bool operator==(const ParticleConditions&) const = default;
};

/// Non-owning view of one stored response image.
struct ResponseView {
  const float* pixels = nullptr;
  int height = 0;
  int width = 0;

  float at(int r, int c) const { return pixels[r * width + c]; }
  int size() const { return height * width; }
};

}  // namespace moecalo
