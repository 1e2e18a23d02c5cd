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

// Deformable 2-D convolution.
//
// A companion "offset" convolution predicts, for every output location, a
// (dy, dx) displacement per kernel point and per offset group. The main
// kernel then reads its inputs at the displaced, generally fractional,
// positions through bilinear interpolation.
//
// Offset tensor layout: [N, 2*G*kH*kW, H', W'], channel (g*kH*kW + k)*2 holds
// dy and the next channel dx, for offset group g and kernel point
// k = ki*kW + kj. Input channel c belongs to group c / (C/G).
//
// "Offset groups" is how the number of offsets per layer is parameterized
// here (3 for a network's input layer, 8 elsewhere). An alternative reading
// of that count, e.g. as a per-input-channel quantity, is not implemented.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "traitnet/gemm.hpp"
#include "traitnet/nn.hpp"
#include "traitnet/ops.hpp"
#include "traitnet/tensor.hpp"

namespace traitnet {

/// Bilinear read of one plane at a fractional position, with the partials
/// needed for backprop.
///
/// Positions with y <= -1, y >= H, x <= -1 or x >= W read 0 and have zero
/// gradients. Otherwise the four integer neighbours are blended and any
/// neighbour outside the plane counts as a zero-valued phantom pixel whose
/// `index` is -1. At exactly integer coordinates the cell whose top-left
/// corner is the sample point is used (floor), which fixes the one-sided
/// coordinate subgradient there.
struct BilinearSample {
  double value = 0.0;
  double d_dy = 0.0;
  double d_dx = 0.0;
  std::array<std::int64_t, 4> index{-1, -1, -1, -1};  // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
  std::array<double, 4> weight{0.0, 0.0, 0.0, 0.0};
};

namespace detail {

/// Corner indices and blend weights without reading pixel values.
struct BilinearTap {
  std::array<std::int64_t, 4> index{-1, -1, -1, -1};
  std::array<double, 4> weight{0.0, 0.0, 0.0, 0.0};
  double ly = 0.0, lx = 0.0;
  bool inside = false;
};

inline BilinearTap bilinear_tap(std::int64_t h, std::int64_t w, double y, double x) {
  BilinearTap t;
  if (!(y > -1.0 && y < static_cast<double>(h) && x > -1.0 && x < static_cast<double>(w))) return t;
  t.inside = true;
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
  const std::int64_t y1 = y0 + 1, x1 = x0 + 1;
  t.ly = y - fy;
  t.lx = x - fx;
  const double hy = 1.0 - t.ly, hx = 1.0 - t.lx;
  const bool top = y0 >= 0, bottom = y1 <= h - 1, left = x0 >= 0, right = x1 <= w - 1;
  if (top && left) t.index[0] = y0 * w + x0;
  if (top && right) t.index[1] = y0 * w + x1;
  if (bottom && left) t.index[2] = y1 * w + x0;
  if (bottom && right) t.index[3] = y1 * w + x1;
  t.weight = {hy * hx, hy * t.lx, t.ly * hx, t.ly * t.lx};
  return t;
}

inline double tap_read(const BilinearTap& t, const double* plane, std::array<double, 4>& v) {
  double out = 0.0;
  for (int j = 0; j < 4; ++j) {
    v[j] = t.index[j] >= 0 ? plane[t.index[j]] : 0.0;
    out += t.weight[j] * v[j];
  }
  return out;
}

}  // namespace detail

inline BilinearSample bilinear_sample(std::span<const double> plane, std::int64_t h, std::int64_t w, double y,
                                      double x) {
  TRAITNET_CHECK_DIM(static_cast<std::int64_t>(plane.size()) == h * w, "bilinear_sample", "plane",
                 "plane size does not match H*W");
  const auto t = detail::bilinear_tap(h, w, y, x);
  BilinearSample s;
  if (!t.inside) return s;
  std::array<double, 4> v{};
  s.value = detail::tap_read(t, plane.data(), v);
  const double hy = 1.0 - t.ly, hx = 1.0 - t.lx;
  s.d_dy = hx * (v[2] - v[0]) + t.lx * (v[3] - v[1]);
  s.d_dx = hy * (v[1] - v[0]) + t.ly * (v[3] - v[2]);
  s.index = t.index;
  s.weight = t.weight;
  return s;
}

/// Bilinear read of input[n, c] at (y, x).
inline double bilinear_sample(const Tensor& input, double y, double x, std::int64_t n, std::int64_t c) {
  detail::require_ndim("bilinear_sample", input, 4, "input");
  const std::int64_t h = input.dim(2), w = input.dim(3);
  const std::int64_t plane = (n * input.dim(1) + c) * h * w;
  return bilinear_sample(input.data().subspan(plane, h * w), h, w, y, x).value;
}

namespace detail {

struct DeformGeometry {
  Conv2dGeometry conv;
  std::int64_t groups;
  std::int64_t channels_per_group;
  std::int64_t kernel_points;
};

inline DeformGeometry deform_geometry(const Tensor& input, const Tensor& offset, const Tensor& weight,
                                      std::int64_t stride, std::int64_t padding) {
  DeformGeometry g{conv_geometry("deform_conv2d", input, weight, stride, padding), 0, 0, 0};
  require_ndim("deform_conv2d", offset, 4, "offset");
  g.kernel_points = g.conv.kernel_h * g.conv.kernel_w;
  if (offset.dim(0) != input.dim(0))
    throw DimensionError("deform_conv2d", "batch", "offset batch " + std::to_string(offset.dim(0)) + " vs input " +
                                                       std::to_string(input.dim(0)));
  if (offset.dim(2) != g.conv.out_h || offset.dim(3) != g.conv.out_w)
    throw DimensionError("deform_conv2d", "spatial",
                         "offset field " + shape_str(offset.shape()) + " does not match output grid " +
                             std::to_string(g.conv.out_h) + "x" + std::to_string(g.conv.out_w));
  const std::int64_t per_group = 2 * g.kernel_points;
  if (offset.dim(1) == 0 || offset.dim(1) % per_group != 0)
    throw DimensionError("deform_conv2d", "offset_channels",
                         std::to_string(offset.dim(1)) + " is not a positive multiple of 2*kH*kW=" +
                             std::to_string(per_group));
  g.groups = offset.dim(1) / per_group;
  if (g.conv.channels % g.groups != 0)
    throw ConfigError("deform_conv2d: offset groups " + std::to_string(g.groups) + " do not divide " +
                      std::to_string(g.conv.channels) + " input channels");
  g.channels_per_group = g.conv.channels / g.groups;
  return g;
}

/// Taps for one sample, indexed [(group * kernel_points + k) * HW + pixel].
inline std::vector<BilinearTap> deform_taps(const DeformGeometry& g, const double* offset) {
  const auto& c = g.conv;
  const std::int64_t hw = c.col_cols();
  std::vector<BilinearTap> taps(static_cast<std::size_t>(g.groups * g.kernel_points * hw));
  for (std::int64_t grp = 0; grp < g.groups; ++grp)
    for (std::int64_t k = 0; k < g.kernel_points; ++k) {
      const std::int64_t ki = k / c.kernel_w, kj = k % c.kernel_w;
      const double* dy = offset + ((grp * g.kernel_points + k) * 2) * hw;
      const double* dx = dy + hw;
      BilinearTap* row = taps.data() + (grp * g.kernel_points + k) * hw;
      for (std::int64_t oy = 0; oy < c.out_h; ++oy)
        for (std::int64_t ox = 0; ox < c.out_w; ++ox) {
          const std::int64_t p = oy * c.out_w + ox;
          const double y = static_cast<double>(oy * c.stride - c.padding + ki) + dy[p];
          const double x = static_cast<double>(ox * c.stride - c.padding + kj) + dx[p];
          row[p] = bilinear_tap(c.height, c.width, y, x);
        }
    }
  return taps;
}

inline void deform_im2col(const DeformGeometry& g, const std::vector<BilinearTap>& taps, const double* img,
                          double* cols, std::int64_t ld) {
  const auto& c = g.conv;
  const std::int64_t hw = c.col_cols(), plane = c.height * c.width;
  std::array<double, 4> v{};
  for (std::int64_t ch = 0; ch < c.channels; ++ch) {
    const std::int64_t grp = ch / g.channels_per_group;
    const double* src = img + ch * plane;
    for (std::int64_t k = 0; k < g.kernel_points; ++k) {
      const BilinearTap* row = taps.data() + (grp * g.kernel_points + k) * hw;
      double* dst = cols + (ch * g.kernel_points + k) * ld;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = row[p].inside ? tap_read(row[p], src, v) : 0.0;
    }
  }
}

}  // namespace detail

/// Deformable convolution with an explicit offset field.
/// input [N,C,H,W], offset [N,2*G*kH*kW,H',W'], weight [F,C,kH,kW], bias [F]
/// or undefined. Differentiable w.r.t. all four.
inline Tensor deform_conv2d(const Tensor& input, const Tensor& offset, const Tensor& weight, const Tensor& bias = {},
                            std::int64_t stride = 1, std::int64_t padding = 0) {
  const auto geo = detail::deform_geometry(input, offset, weight, stride, padding);
  const std::int64_t n = input.dim(0), f = weight.dim(0);
  detail::require_bias("deform_conv2d", bias, f);
  const std::int64_t rows = geo.conv.col_rows(), hw = geo.conv.col_cols();
  const std::int64_t in_stride = geo.conv.channels * geo.conv.height * geo.conv.width;
  const std::int64_t off_stride = offset.dim(1) * hw;

  const std::int64_t chunk = detail::chunk_size(n, rows, hw);

  std::vector<double> out(static_cast<std::size_t>(n * f * hw));
  auto cols = detail::scratch(rows * chunk * hw);
  auto tmp = detail::scratch(f * chunk * hw);
  for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
    const std::int64_t m = std::min(chunk, n - i0), ld = m * hw;
    for (std::int64_t i = 0; i < m; ++i) {
      const auto taps = detail::deform_taps(geo, offset.data().data() + (i0 + i) * off_stride);
      detail::deform_im2col(geo, taps, input.data().data() + (i0 + i) * in_stride, cols.get() + i * hw, ld);
    }
    gemm::ab(weight.data().data(), cols.get(), tmp.get(), f, rows, ld, false);
    detail::unpack_chunk(tmp.get(), out.data() + i0 * f * hw, m, f, hw);
  }
  detail::add_bias(bias, out.data(), n, f, hw);

  std::vector<Tensor> inputs{input, offset, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {n, f, geo.conv.out_h, geo.conv.out_w}, std::move(out), std::move(inputs), "deform_conv2d",
      [input, offset, weight, bias, geo, n, f, rows, hw, in_stride, off_stride, chunk](std::span<const double> g) {
        const auto& c = geo.conv;
        const std::int64_t plane = c.height * c.width;
        const bool want_input = input.requires_grad();
        const bool want_offset = offset.requires_grad();
        const bool want_weight = weight.requires_grad();
        double* dinput = want_input ? grad_sink(input).data() : nullptr;
        double* doffset = want_offset ? grad_sink(offset).data() : nullptr;
        double* dweight = want_weight ? grad_sink(weight).data() : nullptr;
        auto cols = detail::scratch(rows * chunk * hw);
        auto gpack = detail::scratch(f * chunk * hw);
        std::vector<std::vector<detail::BilinearTap>> taps(static_cast<std::size_t>(chunk));
        std::array<double, 4> v{};
        for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
          const std::int64_t m = std::min(chunk, n - i0), ld = m * hw;
          detail::pack_chunk(g.data() + i0 * f * hw, gpack.get(), m, f, hw);
          for (std::int64_t i = 0; i < m; ++i)
            taps[i] = detail::deform_taps(geo, offset.data().data() + (i0 + i) * off_stride);
          if (want_weight) {
            for (std::int64_t i = 0; i < m; ++i)
              detail::deform_im2col(geo, taps[i], input.data().data() + (i0 + i) * in_stride, cols.get() + i * hw,
                                    ld);
            gemm::abt(gpack.get(), cols.get(), dweight, f, ld, rows, true);
          }
          if (!want_input && !want_offset) continue;
          gemm::atb(weight.data().data(), gpack.get(), cols.get(), rows, f, ld, false);
          for (std::int64_t i = 0; i < m; ++i) {
            const std::int64_t s = i0 + i;
            const double* img = input.data().data() + s * in_stride;
            for (std::int64_t ch = 0; ch < c.channels; ++ch) {
              const std::int64_t grp = ch / geo.channels_per_group;
              const double* src = img + ch * plane;
              double* dimg = want_input ? dinput + s * in_stride + ch * plane : nullptr;
              for (std::int64_t k = 0; k < geo.kernel_points; ++k) {
                const std::int64_t tap_row = grp * geo.kernel_points + k;
                const detail::BilinearTap* row = taps[i].data() + tap_row * hw;
                const double* d = cols.get() + (ch * geo.kernel_points + k) * ld + i * hw;
                double* gdy = want_offset ? doffset + s * off_stride + tap_row * 2 * hw : nullptr;
                double* gdx = want_offset ? gdy + hw : nullptr;
                for (std::int64_t p = 0; p < hw; ++p) {
                  const auto& t = row[p];
                  if (!t.inside || d[p] == 0.0) continue;
                  if (want_input)
                    for (int j = 0; j < 4; ++j)
                      if (t.index[j] >= 0) dimg[t.index[j]] += t.weight[j] * d[p];
                  if (want_offset) {
                    detail::tap_read(t, src, v);
                    const double hy = 1.0 - t.ly, hx = 1.0 - t.lx;
                    gdy[p] += d[p] * (hx * (v[2] - v[0]) + t.lx * (v[3] - v[1]));
                    gdx[p] += d[p] * (hy * (v[1] - v[0]) + t.ly * (v[3] - v[2]));
                  }
                }
              }
            }
          }
        }
        detail::accumulate_bias_grad(bias, g, n, f, hw);
      });
}

/// Main convolution plus its offset-generating convolution.
class DeformConv2d {
 public:
  DeformConv2d() = default;

  /// Validates: offset conv emits 2*kH*kW*groups channels with the main
  /// conv's kernel/stride/padding, and groups divides the input channels.
  DeformConv2d(Tensor weight, Tensor bias, Conv2d offset_conv, std::int64_t groups, std::int64_t stride,
               std::int64_t padding)
      : weight_(std::move(weight)),
        bias_(std::move(bias)),
        offset_conv_(std::move(offset_conv)),
        groups_(groups),
        stride_(stride),
        padding_(padding) {
    if (weight_.ndim() != 4) throw DimensionError("DeformConv2d", "ndim", "weight must be 4-D");
    detail::require_bias("DeformConv2d", bias_, weight_.dim(0));
    if (groups_ < 1) throw ConfigError("DeformConv2d: offset groups must be positive");
    if (in_channels() % groups_ != 0)
      throw ConfigError("DeformConv2d: offset groups " + std::to_string(groups_) + " do not divide " +
                        std::to_string(in_channels()) + " input channels");
    if (offset_conv_.out_channels() != offset_channels())
      throw ConfigError("DeformConv2d: offset conv emits " + std::to_string(offset_conv_.out_channels()) +
                        " channels, expected 2*kH*kW*G = " + std::to_string(offset_channels()));
    if (offset_conv_.in_channels() != in_channels() || offset_conv_.kernel_h() != kernel_h() ||
        offset_conv_.kernel_w() != kernel_w() || offset_conv_.stride() != stride_ || offset_conv_.padding() != padding_)
      throw ConfigError("DeformConv2d: offset conv geometry differs from the main conv");
  }

  Tensor offsets(const Tensor& x) const { return offset_conv_.forward(x); }

  Tensor forward_with_offsets(const Tensor& x, const Tensor& offset) const {
    return deform_conv2d(x, offset, weight_, bias_, stride_, padding_);
  }

  Tensor forward(const Tensor& x) const { return forward_with_offsets(x, offsets(x)); }

  std::int64_t in_channels() const { return weight_.dim(1); }
  std::int64_t out_channels() const { return weight_.dim(0); }
  std::int64_t kernel_h() const { return weight_.dim(2); }
  std::int64_t kernel_w() const { return weight_.dim(3); }
  std::int64_t stride() const { return stride_; }
  std::int64_t padding() const { return padding_; }
  std::int64_t groups() const { return groups_; }
  std::int64_t offset_channels() const { return 2 * kernel_h() * kernel_w() * groups_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Conv2d& offset_conv() const { return offset_conv_; }

  void collect(const std::string& prefix, TensorList& params) const {
    params.push_back({prefix + "weight", weight_});
    if (bias_.defined()) params.push_back({prefix + "bias", bias_});
    offset_conv_.collect(prefix + "offset.", params);
  }

 private:
  Tensor weight_;
  Tensor bias_;
  Conv2d offset_conv_;
  std::int64_t groups_ = 1;
  std::int64_t stride_ = 1;
  std::int64_t padding_ = 0;
};

/// Copies a standard conv's weights into a deformable layer whose offset conv
/// weights and bias are exactly zero, so the result computes the same
/// function as `conv` until the offsets are trained.
inline DeformConv2d convert_standard_to_deformable(const Conv2d& conv, std::int64_t offset_groups) {
  if (offset_groups < 1 || conv.in_channels() % offset_groups != 0)
    throw ConfigError("convert_standard_to_deformable: offset groups " + std::to_string(offset_groups) +
                      " must divide " + std::to_string(conv.in_channels()) + " input channels");
  const std::int64_t off_ch = 2 * conv.kernel_h() * conv.kernel_w() * offset_groups;
  Conv2d offset_conv(Tensor::zeros({off_ch, conv.in_channels(), conv.kernel_h(), conv.kernel_w()}, true),
                     Tensor::zeros({off_ch}, true), conv.stride(), conv.padding());
  return DeformConv2d(deep_copy(conv.weight()), deep_copy(conv.bias()), std::move(offset_conv), offset_groups,
                      conv.stride(), conv.padding());
}

}  // namespace traitnet
