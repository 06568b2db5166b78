// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "moecalo/tensor.hpp"

namespace moecalo::nn {

/// Adam with bias correction. Betas default to the DCGAN convention.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, std::vector<Tensor<T>*> grads, double lr,
       double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), grads_(std::move(grads)), lr_(lr),
        beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(std::vector<double>(p->v.size(), 0.0));
      v_.emplace_back(std::vector<double>(p->v.size(), 0.0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k]->v;
      const auto& g = grads_[k]->v;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grads() {
    for (auto* g : grads_) g->fill(T(0));
  }

  double lr() const { return lr_; }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>*> grads_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace moecalo::nn
