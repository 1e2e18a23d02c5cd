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

// Differentiable operations. Image tensors are NCHW, row-major.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "traitnet/gemm.hpp"
#include "traitnet/tensor.hpp"

namespace traitnet {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(op, "shape", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_ndim(const char* op, const Tensor& t, std::size_t n, const char* what) {
  if (t.ndim() != n)
    throw DimensionError(op, "ndim", std::string(what) + " must be " + std::to_string(n) + "-D, got " +
                                         shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto sink = grad_sink(*t);
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto sink = grad_sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
    }
    if (b.requires_grad()) {
      auto sink = grad_sink(b);
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] -= g[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [a, b](std::span<const double> g) {
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto sink = grad_sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto sink = grad_sink(b);
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i] * x[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, "scale", [a, factor](std::span<const double> g) {
    auto sink = grad_sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i] * factor;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a}, "relu", [a](std::span<const double> g) {
    auto x = a.data();
    auto sink = grad_sink(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) sink[i] += g[i];
  });
}

/// Sum of all elements, as a scalar tensor.
inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a}, "sum", [a](std::span<const double> g) {
    auto sink = grad_sink(a);
    for (auto& s : sink) s += g[0];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != static_cast<std::int64_t>(a.numel()))
    throw DimensionError("reshape", "numel", shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, "reshape", [a](std::span<const double> g) {
    auto sink = grad_sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
  });
}

/// Concatenates along axis 1 (channels for NCHW, features for [N,D]).
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat", "inputs", "no tensors to concatenate");
  const Shape& ref = parts.front().shape();
  if (ref.size() < 2) throw DimensionError("concat", "ndim", "need at least 2-D tensors");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    if (p.ndim() != ref.size()) throw DimensionError("concat", "ndim", shape_str(p.shape()) + " vs " + shape_str(ref));
    for (std::size_t ax = 0; ax < ref.size(); ++ax) {
      if (ax == 1) continue;
      if (p.dim(ax) != ref[ax])
        throw DimensionError("concat", ax == 0 ? "batch" : "spatial",
                             "non-channel dims differ: " + shape_str(p.shape()) + " vs " + shape_str(ref));
    }
    channels += p.dim(1);
  }
  const std::int64_t n = ref[0];
  std::int64_t inner = 1;
  for (std::size_t ax = 2; ax < ref.size(); ++ax) inner *= ref[ax];
  Shape shape = ref;
  shape[1] = channels;
  std::vector<double> out(static_cast<std::size_t>(numel_of(shape)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t block = p.dim(1) * inner;
    auto src = p.data();
    for (std::int64_t i = 0; i < n; ++i)
      std::copy_n(src.begin() + i * block, block, out.begin() + i * channels * inner + offset);
    offset += block;
  }
  return make_result(std::move(shape), std::move(out), parts, "concat",
                     [parts, n, channels, inner](std::span<const double> g) {
                       std::int64_t offset = 0;
                       for (const auto& p : parts) {
                         const std::int64_t block = p.dim(1) * inner;
                         if (p.requires_grad()) {
                           auto sink = grad_sink(p);
                           for (std::int64_t i = 0; i < n; ++i)
                             for (std::int64_t j = 0; j < block; ++j)
                               sink[i * block + j] += g[i * channels * inner + offset + j];
                         }
                         offset += block;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// input [N,D] x weight [O,D]^T + bias [O] -> [N,O]. `bias` may be undefined.
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {}) {
  detail::require_ndim("linear", input, 2, "input");
  detail::require_ndim("linear", weight, 2, "weight");
  const std::int64_t n = input.dim(0), d = input.dim(1), o = weight.dim(0);
  if (weight.dim(1) != d)
    throw DimensionError("linear", "in_features",
                         "input has " + std::to_string(d) + ", weight expects " + std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != o))
    throw DimensionError("linear", "out_features", "bias " + shape_str(bias.shape()) + " for " + std::to_string(o) +
                                                       " outputs");
  std::vector<double> out(static_cast<std::size_t>(n * o), 0.0);
  gemm::abt(input.data().data(), weight.data().data(), out.data(), n, d, o, false);
  if (bias.defined()) {
    auto b = bias.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < o; ++j) out[i * o + j] += b[j];
  }
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({n, o}, std::move(out), std::move(inputs), "linear",
                     [input, weight, bias, n, d, o](std::span<const double> g) {
                       if (input.requires_grad())
                         gemm::ab(g.data(), weight.data().data(), grad_sink(input).data(), n, o, d, true);
                       if (weight.requires_grad())
                         gemm::atb(g.data(), input.data().data(), grad_sink(weight).data(), o, n, d, true);
                       if (bias.defined() && bias.requires_grad()) {
                         auto sink = grad_sink(bias);
                         for (std::int64_t i = 0; i < n; ++i)
                           for (std::int64_t j = 0; j < o; ++j) sink[j] += g[i * o + j];
                       }
                     });
}

struct Conv2dGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h, out_w;

  std::int64_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::int64_t col_cols() const { return out_h * out_w; }
};

namespace detail {

inline Conv2dGeometry conv_geometry(const char* op, const Tensor& input, const Tensor& weight, std::int64_t stride,
                                    std::int64_t padding) {
  require_ndim(op, input, 4, "input");
  require_ndim(op, weight, 4, "weight");
  if (stride < 1) throw DimensionError(op, "stride", "stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw DimensionError(op, "padding", "padding must be >= 0, got " + std::to_string(padding));
  if (weight.dim(1) != input.dim(1))
    throw DimensionError(op, "channels", "input has " + std::to_string(input.dim(1)) +
                                             " channels, weight expects " + std::to_string(weight.dim(1)));
  Conv2dGeometry geo{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  const std::int64_t span_h = geo.height + 2 * padding - geo.kernel_h;
  const std::int64_t span_w = geo.width + 2 * padding - geo.kernel_w;
  if (span_h < 0)
    throw DimensionError(op, "height", "kernel " + std::to_string(geo.kernel_h) + " exceeds padded height " +
                                           std::to_string(geo.height + 2 * padding));
  if (span_w < 0)
    throw DimensionError(op, "width", "kernel " + std::to_string(geo.kernel_w) + " exceeds padded width " +
                                          std::to_string(geo.width + 2 * padding));
  geo.out_h = span_h / stride + 1;
  geo.out_w = span_w / stride + 1;
  return geo;
}

inline void require_bias(const char* op, const Tensor& bias, std::int64_t filters) {
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != filters))
    throw DimensionError(op, "filters", "bias " + shape_str(bias.shape()) + " for " + std::to_string(filters) +
                                            " filters");
}

/// Writes the [rows, H'*W'] patch matrix of one image into `cols`, whose
/// rows are `ld` apart (ld >= H'*W', so several images can share a buffer).
inline void im2col(const double* img, const Conv2dGeometry& g, double* cols, std::int64_t ld = 0) {
  const std::int64_t hw = ld ? ld : g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const double* plane = img + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        double* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * hw;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + ki;
          double* dst = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = plane + y * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t x = ox * g.stride - g.padding + kj;
            dst[ox] = (x >= 0 && x < g.width) ? src[x] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im(const double* cols, const Conv2dGeometry& g, double* img, std::int64_t ld = 0) {
  const std::int64_t hw = ld ? ld : g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double* plane = img + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * hw;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + ki;
          if (y < 0 || y >= g.height) continue;
          double* dst = plane + y * g.width;
          const double* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t x = ox * g.stride - g.padding + kj;
            if (x >= 0 && x < g.width) dst[x] += src[ox];
          }
        }
      }
    }
  }
}
}  // namespace detail

namespace detail {

/// Column buffers are capped at this many doubles; a batch is processed in
/// chunks of whole samples that fit.
inline constexpr std::int64_t kColumnBudget = std::int64_t{1} << 22;

/// Scratch space that the caller overwrites in full before reading.
inline std::unique_ptr<double[]> scratch(std::int64_t n) {
  return std::make_unique_for_overwrite<double[]>(static_cast<std::size_t>(n));
}

inline std::int64_t chunk_size(std::int64_t n, std::int64_t rows, std::int64_t hw) {
  return std::clamp<std::int64_t>(kColumnBudget / std::max<std::int64_t>(1, rows * hw), 1, n);
}

/// [F, m*hw] (chunk-major columns) <-> [m, F, hw] (NCHW) for m samples.
inline void unpack_chunk(const double* src, double* dst, std::int64_t m, std::int64_t f, std::int64_t hw) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < f; ++k) std::copy_n(src + k * m * hw + i * hw, hw, dst + (i * f + k) * hw);
}

inline void pack_chunk(const double* src, double* dst, std::int64_t m, std::int64_t f, std::int64_t hw) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < f; ++k) std::copy_n(src + (i * f + k) * hw, hw, dst + k * m * hw + i * hw);
}

inline void add_bias(const Tensor& bias, double* out, std::int64_t n, std::int64_t f, std::int64_t hw) {
  if (!bias.defined()) return;
  auto b = bias.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < f; ++k) {
      double* dst = out + (i * f + k) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] += b[k];
    }
}

inline void accumulate_bias_grad(const Tensor& bias, std::span<const double> g, std::int64_t n, std::int64_t f,
                                 std::int64_t hw) {
  if (!bias.defined() || !bias.requires_grad()) return;
  auto sink = grad_sink(bias);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < f; ++k) {
      const double* gk = g.data() + (i * f + k) * hw;
      double acc = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) acc += gk[p];
      sink[k] += acc;
    }
}

}  // namespace detail

/// Zero-padded 2-D cross-correlation. input [N,C,H,W], weight [F,C,kH,kW],
/// bias [F] or undefined.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {}, std::int64_t stride = 1,
                     std::int64_t padding = 0) {
  const Conv2dGeometry geo = detail::conv_geometry("conv2d", input, weight, stride, padding);
  const std::int64_t n = input.dim(0), f = weight.dim(0);
  detail::require_bias("conv2d", bias, f);
  const std::int64_t rows = geo.col_rows(), hw = geo.col_cols();
  const std::int64_t in_stride = geo.channels * geo.height * geo.width;
  const std::int64_t chunk = detail::chunk_size(n, rows, hw);

  std::vector<double> out(static_cast<std::size_t>(n * f * hw));
  auto cols = detail::scratch(rows * chunk * hw);
  auto tmp = detail::scratch(f * chunk * hw);
  for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
    const std::int64_t m = std::min(chunk, n - i0), ld = m * hw;
    for (std::int64_t i = 0; i < m; ++i)
      detail::im2col(input.data().data() + (i0 + i) * in_stride, geo, cols.get() + i * hw, ld);
    gemm::ab(weight.data().data(), cols.get(), tmp.get(), f, rows, ld, false);
    detail::unpack_chunk(tmp.get(), out.data() + i0 * f * hw, m, f, hw);
  }
  detail::add_bias(bias, out.data(), n, f, hw);

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {n, f, geo.out_h, geo.out_w}, std::move(out), std::move(inputs), "conv2d",
      [input, weight, bias, geo, n, f, rows, hw, in_stride, chunk](std::span<const double> g) {
        const bool want_input = input.requires_grad();
        const bool want_weight = weight.requires_grad();
        double* dinput = want_input ? grad_sink(input).data() : nullptr;
        double* dweight = want_weight ? grad_sink(weight).data() : nullptr;
        auto cols = detail::scratch(rows * chunk * hw);
        auto gpack = detail::scratch(f * chunk * hw);
        for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
          const std::int64_t m = std::min(chunk, n - i0), ld = m * hw;
          detail::pack_chunk(g.data() + i0 * f * hw, gpack.get(), m, f, hw);
          if (want_weight) {
            for (std::int64_t i = 0; i < m; ++i)
              detail::im2col(input.data().data() + (i0 + i) * in_stride, geo, cols.get() + i * hw, ld);
            gemm::abt(gpack.get(), cols.get(), dweight, f, ld, rows, true);
          }
          if (want_input) {
            gemm::atb(weight.data().data(), gpack.get(), cols.get(), rows, f, ld, false);
            for (std::int64_t i = 0; i < m; ++i)
              detail::col2im(cols.get() + i * hw, geo, dinput + (i0 + i) * in_stride, ld);
          }
        }
        detail::accumulate_bias_grad(bias, g, n, f, hw);
      });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// Max pooling with implicit -inf padding.
inline Tensor max_pool2d(const Tensor& input, std::int64_t kernel, std::int64_t stride, std::int64_t padding = 0) {
  detail::require_ndim("max_pool2d", input, 4, "input");
  if (kernel < 1 || stride < 1 || padding < 0 || 2 * padding > kernel)
    throw DimensionError("max_pool2d", "window", "invalid kernel/stride/padding");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel > h + 2 * padding)
    throw DimensionError("max_pool2d", "height", "window " + std::to_string(kernel) + " larger than input height " +
                                                     std::to_string(h));
  if (kernel > w + 2 * padding)
    throw DimensionError("max_pool2d", "width", "window " + std::to_string(kernel) + " larger than input width " +
                                                    std::to_string(w));
  const std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * c * oh * ow));
  std::vector<std::int64_t> argmax(out.size());
  auto x = input.data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t y = oy * stride - padding + ky;
          if (y < 0 || y >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t xx = ox * stride - padding + kx;
            if (xx < 0 || xx >= w) continue;
            const double v = src[y * w + xx];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = y * w + xx;
            }
          }
        }
        const std::int64_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  return make_result({n, c, oh, ow}, std::move(out), {input}, "max_pool2d",
                     [input, argmax = std::move(argmax)](std::span<const double> g) {
                       auto sink = grad_sink(input);
                       for (std::size_t o = 0; o < g.size(); ++o) sink[argmax[o]] += g[o];
                     });
}

/// [N,C,H,W] -> [N,C], mean over the spatial axes.
inline Tensor global_avg_pool(const Tensor& input) {
  detail::require_ndim("global_avg_pool", input, 4, "input");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool", "spatial", "empty spatial extent");
  std::vector<double> out(static_cast<std::size_t>(n * c));
  auto x = input.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = acc / static_cast<double>(hw);
  }
  return make_result({n, c}, std::move(out), {input}, "global_avg_pool", [input, hw](std::span<const double> g) {
    auto sink = grad_sink(input);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::int64_t i = 0; i < hw; ++i) sink[p * hw + i] += g[p] * inv;
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel batch normalization over (N,H,W).
///
/// Training mode normalizes with batch statistics and updates the running
/// buffers in place (running = (1-momentum)*running + momentum*batch, with the
/// unbiased batch variance). Eval mode is the affine map
/// gamma*(x-running_mean)/sqrt(running_var+eps) + beta.
inline Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                          Tensor& running_var, bool training, double momentum = kBatchNormMomentum,
                          double eps = kBatchNormEps) {
  detail::require_ndim("batchnorm2d", input, 4, "input");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)})
    if (t->ndim() != 1 || t->dim(0) != c)
      throw DimensionError("batchnorm2d", "channels",
                           "parameter " + shape_str(t->shape()) + " for " + std::to_string(c) + " channels");
  const std::int64_t count = n * hw;
  auto x = input.data();
  auto gam = gamma.data();
  auto bet = beta.data();

  std::vector<double> mean(c), inv_std(c);
  if (training) {
    if (count < 2) throw DimensionError("batchnorm2d", "batch", "training mode needs more than one value per channel");
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::int64_t k = 0; k < c; ++k) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) acc += x[(i * c + k) * hw + p];
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) {
          const double d = x[(i * c + k) * hw + p] - mu;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      mean[k] = mu;
      inv_std[k] = 1.0 / std::sqrt(var + eps);
      rm[k] = (1.0 - momentum) * rm[k] + momentum * mu;
      rv[k] = (1.0 - momentum) * rv[k] + momentum * sq / static_cast<double>(count - 1);
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::int64_t k = 0; k < c; ++k) {
      mean[k] = rm[k];
      inv_std[k] = 1.0 / std::sqrt(rv[k] + eps);
    }
  }

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k)
      for (std::int64_t p = 0; p < hw; ++p) {
        const std::int64_t idx = (i * c + k) * hw + p;
        xhat[idx] = (x[idx] - mean[k]) * inv_std[k];
        out[idx] = gam[k] * xhat[idx] + bet[k];
      }

  return make_result(
      input.shape(), std::move(out), {input, gamma, beta}, training ? "batchnorm2d_train" : "batchnorm2d_eval",
      [input, gamma, beta, training, n, c, hw, count, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](std::span<const double> g) {
        auto gam = gamma.data();
        std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t k = 0; k < c; ++k)
            for (std::int64_t p = 0; p < hw; ++p) {
              const std::int64_t idx = (i * c + k) * hw + p;
              dgamma[k] += g[idx] * xhat[idx];
              dbeta[k] += g[idx];
            }
        if (gamma.requires_grad()) {
          auto sink = grad_sink(gamma);
          for (std::int64_t k = 0; k < c; ++k) sink[k] += dgamma[k];
        }
        if (beta.requires_grad()) {
          auto sink = grad_sink(beta);
          for (std::int64_t k = 0; k < c; ++k) sink[k] += dbeta[k];
        }
        if (!input.requires_grad()) return;
        auto sink = grad_sink(input);
        const double m = static_cast<double>(count);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t k = 0; k < c; ++k) {
            const double scale = gam[k] * inv_std[k];
            for (std::int64_t p = 0; p < hw; ++p) {
              const std::int64_t idx = (i * c + k) * hw + p;
              if (training)
                sink[idx] += scale * (g[idx] - dbeta[k] / m - xhat[idx] * dgamma[k] / m);
              else
                sink[idx] += scale * g[idx];
            }
          }
      });
}

}  // namespace traitnet
