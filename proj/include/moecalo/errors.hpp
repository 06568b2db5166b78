// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moecalo {

/// Malformed or inconsistent on-disk data (missing arrays, bad shapes,
/// invalid pixel values). Messages name the offending array and index.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid arguments or configuration values.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-recoverable failure during a training run (NaN losses, unwritable
/// checkpoint path).
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / HDF5 level failure.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace moecalo
