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

// Dense f64 tensor with a dynamic reverse-mode autodiff graph.
//
// A Tensor is a cheap handle onto shared storage. Every differentiable op
// records a GradFn on its output holding handles to its inputs, so the graph
// lives exactly as long as the tensors that reference it and is rebuilt on
// every forward pass.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "traitnet/errors.hpp"

namespace traitnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;

struct GradFn {
  const char* name = "";
  std::vector<Tensor> inputs;
  // Receives d(loss)/d(output) and accumulates into the inputs' grads.
  std::function<void(std::span<const double>)> apply;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    TRAITNET_CHECK_DIM(static_cast<std::int64_t>(values.size()) == numel_of(shape), "tensor",
                   "numel", "shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                                " values, got " + std::to_string(values.size()));
    for (auto d : shape) TRAITNET_CHECK_DIM(d >= 0, "tensor", "shape", "negative dim");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = static_cast<std::size_t>(numel_of(shape));
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) { return from({}, {value}, requires_grad); }

  bool defined() const { return impl_ != nullptr; }
  TensorImpl* impl() const { return impl_.get(); }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access for data construction and optimizer updates; never
  // use on a tensor whose value an existing graph depends on.
  std::span<double> mutable_data() { return impl_->data; }
  std::vector<double>& storage() { return impl_->data; }

  double item() const {
    TRAITNET_CHECK_DIM(numel() == 1, "item", "numel", "expected a single element, shape " +
                                                                     shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  const std::shared_ptr<GradFn>& grad_fn() const { return impl_->grad_fn; }

  /// Returns a graph-free copy of the values.
  Tensor detach() const { return from(shape(), impl_->data, false); }

  void backward() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, const char*,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<TensorImpl> impl_;
};

/// Accumulation target for an input's gradient, allocated on first touch.
inline std::span<double> grad_sink(const Tensor& t) {
  TensorImpl* impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

/// Builds an op output; attaches `backward` only when an input needs grads.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* name,
                          std::function<void(std::span<const double>)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (!needs) return out;
  out.impl_->requires_grad = true;
  auto fn = std::make_shared<GradFn>();
  fn->name = name;
  fn->inputs = std::move(inputs);
  fn->apply = std::move(backward);
  out.impl_->grad_fn = std::move(fn);
  return out;
}

/// Reverse-mode sweep from a scalar. Gradients accumulate (+=) into every
/// reachable tensor that requires grad; call zero_grad between steps.
inline void backward(const Tensor& loss) {
  TRAITNET_CHECK(loss.defined(), Error, "backward: undefined tensor");
  TRAITNET_CHECK(loss.numel() == 1, Error, "backward: loss must be a scalar, got shape ", shape_str(loss.shape()));
  TRAITNET_CHECK(loss.requires_grad(), Error, "backward: loss does not require grad");

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  visited.insert(loss.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].impl();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->grad_fn && !node->grad.empty()) node->grad_fn->apply(node->grad);
  }
}

inline void Tensor::backward() const { traitnet::backward(*this); }

}  // namespace traitnet
