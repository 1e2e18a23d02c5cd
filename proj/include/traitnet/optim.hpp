/* Copyright 2026 The traitnet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "traitnet/tensor.hpp"

namespace traitnet {

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

/// One Adam update with bias correction, in place. A parameter without a
/// gradient buffer is treated as having a zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opt) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  TRAITNET_CHECK_DIM(state.m.size() == params.size(), "adam_step", "params",
                 "state tracks " + std::to_string(state.m.size()) + " tensors, got " + std::to_string(params.size()));
  state.t += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    TRAITNET_CHECK_DIM(m.size() == p.numel() && v.size() == p.numel(), "adam_step", "param",
                   "state shape mismatch for parameter " + std::to_string(i));
    if (!p.has_grad()) {
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] *= opt.beta1;
        v[j] *= opt.beta2;
      }
      // A zero gradient on fresh state leaves m at zero, so the update is zero.
    } else {
      auto g = p.grad();
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
        v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      }
    }
    auto w = p.mutable_data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

/// Thin owner of a parameter list plus its Adam state.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {}

  void step() { adam_step(params_, state_, options_); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double lr() const { return options_.lr; }
  const AdamOptions& options() const { return options_; }
  const AdamState& state() const { return state_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  AdamState state_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

}  // namespace traitnet
