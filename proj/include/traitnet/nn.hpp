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

// Parameterized layers built on the raw ops.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "traitnet/ops.hpp"
#include "traitnet/random.hpp"
#include "traitnet/tensor.hpp"

namespace traitnet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using TensorList = std::vector<NamedTensor>;

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
inline Tensor he_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return {};
  return Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad());
}

class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
         std::int64_t padding, bool with_bias, Rng& rng)
      : weight_(he_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
        stride_(stride),
        padding_(padding) {
    if (with_bias) bias_ = Tensor::zeros({out_channels}, true);
  }

  Conv2d(Tensor weight, Tensor bias, std::int64_t stride, std::int64_t padding)
      : weight_(std::move(weight)), bias_(std::move(bias)), stride_(stride), padding_(padding) {
    if (weight_.ndim() != 4) throw DimensionError("Conv2d", "ndim", "weight must be 4-D");
    detail::require_bias("Conv2d", bias_, weight_.dim(0));
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

  std::int64_t in_channels() const { return weight_.dim(1); }
  std::int64_t out_channels() const { return weight_.dim(0); }
  std::int64_t kernel_h() const { return weight_.dim(2); }
  std::int64_t kernel_w() const { return weight_.dim(3); }
  std::int64_t stride() const { return stride_; }
  std::int64_t padding() const { return padding_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  void collect(const std::string& prefix, TensorList& params) const {
    params.push_back({prefix + "weight", weight_});
    if (bias_.defined()) params.push_back({prefix + "bias", bias_});
  }

 private:
  Tensor weight_;
  Tensor bias_;
  std::int64_t stride_ = 1;
  std::int64_t padding_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels)
      : gamma_(Tensor::full({channels}, 1.0, true)),
        beta_(Tensor::zeros({channels}, true)),
        running_mean_(Tensor::zeros({channels})),
        running_var_(Tensor::full({channels}, 1.0)) {}

  Tensor forward(const Tensor& x, bool training) {
    return batchnorm2d(x, gamma_, beta_, running_mean_, running_var_, training);
  }

  void collect(const std::string& prefix, TensorList& params, TensorList& buffers) const {
    params.push_back({prefix + "weight", gamma_});
    params.push_back({prefix + "bias", beta_});
    buffers.push_back({prefix + "running_mean", running_mean_});
    buffers.push_back({prefix + "running_var", running_var_});
  }

 private:
  Tensor gamma_, beta_, running_mean_, running_var_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng)
      : weight_(he_uniform({out_features, in_features}, in_features, rng)),
        bias_(Tensor::zeros({out_features}, true)) {}

  Tensor forward(const Tensor& x) const { return linear(x, weight_, bias_); }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  void collect(const std::string& prefix, TensorList& params) const {
    params.push_back({prefix + "weight", weight_});
    params.push_back({prefix + "bias", bias_});
  }

 private:
  Tensor weight_, bias_;
};

}  // namespace traitnet
