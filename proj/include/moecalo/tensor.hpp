// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

namespace moecalo {

/// Vector with Eigen-preferred alignment. Keeping every tensor buffer on
/// the same alignment makes Eigen's SIMD peeling decisions identical
/// across allocations, which keeps repeated runs bit-identical.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major tensor with a dynamic shape (rank 1-4 in practice).
/// Heavy math goes through Eigen maps; this type only owns storage.
template <typename T>
struct Tensor {
  using Scalar = T;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  std::vector<std::int64_t> shape;
  AlignedVector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s)
      : shape(std::move(s)), v(static_cast<std::size_t>(product(shape)), T(0)) {}

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static std::int64_t product(const std::vector<std::int64_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1},
                           std::multiplies<>());
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  /// Reinterprets the buffer with a new shape of equal element count.
  void reshape(std::vector<std::int64_t> s) {
    assert(product(s) == numel());
    shape = std::move(s);
  }

  T& operator()(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  T operator()(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

  T& operator()(std::int64_t i, std::int64_t j) {
    return v[static_cast<std::size_t>(i * shape[1] + j)];
  }
  T operator()(std::int64_t i, std::int64_t j) const {
    return v[static_cast<std::size_t>(i * shape[1] + j)];
  }

  T& operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return v[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return v[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  /// 2-D Eigen view of the flat buffer.
  MatrixMap mat(std::int64_t rows, std::int64_t cols) {
    assert(rows * cols == numel());
    return MatrixMap(v.data(), rows, cols);
  }
  ConstMatrixMap mat(std::int64_t rows, std::int64_t cols) const {
    assert(rows * cols == numel());
    return ConstMatrixMap(v.data(), rows, cols);
  }
};

}  // namespace moecalo
