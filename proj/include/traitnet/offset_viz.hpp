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


// Inspection of the offsets predicted by a model's first deformable layer.
//
// A point's displaced sampling location, in pixels of that layer's input, is
//
//   (oy * stride - padding + ki + dy,  ox * stride - padding + kj + dx)
//
// for output cell (oy, ox) and kernel point k = ki * kW + kj. This is the
// plain affine grid mapping of the convolution; nothing is back-projected
// through later layers. Offsets are shown as they are, without any gradient
// weighting of activations.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "traitnet/image_io.hpp"
#include "traitnet/model.hpp"

namespace traitnet {

inline constexpr double kDefaultStrongOffsetPx = 3.0;
inline constexpr int kDefaultMaxKernelPoints = 4;

/// Offsets of one deformable layer for a single input, [2*G*kH*kW, H', W']
/// in the layer's offset channel layout, plus the geometry needed to place
/// them.
struct OffsetField {
  Tensor offsets;  // [1, 2*G*kH*kW, H', W']
  std::int64_t groups = 1;
  std::int64_t kernel_h = 1, kernel_w = 1;
  std::int64_t stride = 1, padding = 0;
  std::int64_t input_h = 0, input_w = 0;

  std::int64_t kernel_points() const { return kernel_h * kernel_w; }
  std::int64_t out_h() const { return offsets.dim(2); }
  std::int64_t out_w() const { return offsets.dim(3); }
  double dy(std::int64_t g, std::int64_t k, std::int64_t oy, std::int64_t ox) const {
    return offsets.data()[static_cast<std::size_t>((((g * kernel_points() + k) * 2) * out_h() + oy) * out_w() + ox)];
  }
  double dx(std::int64_t g, std::int64_t k, std::int64_t oy, std::int64_t ox) const {
    return offsets.data()[static_cast<std::size_t>((((g * kernel_points() + k) * 2 + 1) * out_h() + oy) * out_w() + ox)];
  }
};

/// Offset field of `layer` applied to `input` ([1, C, H, W]).
inline OffsetField offset_field(const DeformConv2d& layer, const Tensor& input) {
  TRAITNET_CHECK_DIM(input.ndim() == 4 && input.dim(0) == 1, "offset_field", "batch",
                     "expects a single [1,C,H,W] input, got " + shape_str(input.shape()));
  NoGradGuard no_grad;
  OffsetField f;
  f.offsets = layer.offsets(input);
  f.groups = layer.groups();
  f.kernel_h = layer.kernel_h();
  f.kernel_w = layer.kernel_w();
  f.stride = layer.stride();
  f.padding = layer.padding();
  f.input_h = input.dim(2);
  f.input_w = input.dim(3);
  return f;
}

/// Offsets of the model's first conv for one (normalized) sample. That conv
/// must be deformable.
inline OffsetField extract_offsets(const Model& model, const Sample& sample) {
  const ConvLayer& first = model.first_conv();
  if (!first.deformable())
    throw ConfigError("extract_offsets: model " + model.config().name() + " (" +
                      std::string(conv_kind_name(model.config().conv_kind)) + ") has no deformable first layer");
  const Batch batch = make_batch(std::span<const Sample>(&sample, 1));
  return offset_field(first.deform(), model.first_conv_input(batch));
}

struct StrongOffset {
  std::int64_t oy = 0, ox = 0;
  std::int64_t group = 0;
  std::int64_t kernel_point = 0;
  double dy = 0.0, dx = 0.0;
  double magnitude = 0.0;

  bool operator==(const StrongOffset&) const = default;
};

/// Offsets with magnitude >= threshold, ordered by kernel point, then group,
/// then output row and column.
struct StrongOffsetSet {
  double threshold = kDefaultStrongOffsetPx;
  std::vector<StrongOffset> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<StrongOffset> for_kernel_point(std::int64_t k) const {
    std::vector<StrongOffset> out;
    for (const auto& e : entries)
      if (e.kernel_point == k) out.push_back(e);
    return out;
  }
};

/// The comparison is inclusive: an offset of exactly `threshold` px is kept.
inline StrongOffsetSet filter_strong(const OffsetField& field, double threshold = kDefaultStrongOffsetPx) {
  if (std::isnan(threshold) || threshold < 0.0)
    throw ConfigError("filter_strong: threshold must be a non-negative number of pixels");
  StrongOffsetSet set;
  set.threshold = threshold;
  for (std::int64_t k = 0; k < field.kernel_points(); ++k)
    for (std::int64_t g = 0; g < field.groups; ++g)
      for (std::int64_t oy = 0; oy < field.out_h(); ++oy)
        for (std::int64_t ox = 0; ox < field.out_w(); ++ox) {
          const double dy = field.dy(g, k, oy, ox), dx = field.dx(g, k, oy, ox);
          const double mag = std::hypot(dy, dx);
          if (mag >= threshold) set.entries.push_back({oy, ox, g, k, dy, dx, mag});
        }
  return set;
}

// ---------------------------------------------------------------------------
// Overlay rendering.

using Rgb8 = std::array<std::uint8_t, 3>;

/// Fixed palette; kernel point i of the selection is drawn in colour i.
inline constexpr std::array<Rgb8, 12> kOverlayPalette = {{
    {230, 25, 75},   {60, 180, 75},  {0, 130, 200},  {255, 225, 25},
    {245, 130, 48},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128}, {170, 110, 40},
}};

struct OverlayOptions {
  int max_kernel_points = kDefaultMaxKernelPoints;
  int legend_height = 12;
};

/// One plotted offset. (y, x) is the displaced location; when it falls
/// outside the image the marker is drawn at the clamped (py, px) instead and
/// `clamped` is set.
struct OverlayPoint {
  std::int64_t kernel_point = 0;
  int color = 0;
  double base_y = 0.0, base_x = 0.0;
  double y = 0.0, x = 0.0;
  int py = 0, px = 0;
  bool clamped = false;
};

/// The four kernel corners (fewer for small kernels): the default selection.
inline std::vector<std::int64_t> default_kernel_points(std::int64_t kernel_h, std::int64_t kernel_w) {
  std::vector<std::int64_t> pts = {0, kernel_w - 1, (kernel_h - 1) * kernel_w, kernel_h * kernel_w - 1};
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

namespace detail {

inline void check_kernel_points(const std::vector<std::int64_t>& points, std::int64_t available,
                                const OverlayOptions& opt) {
  const int cap = std::min<int>(opt.max_kernel_points, static_cast<int>(kOverlayPalette.size()));
  if (opt.max_kernel_points < 1) throw ConfigError("render_overlay: max_kernel_points must be >= 1");
  if (static_cast<int>(points.size()) > cap)
    throw ConfigError("render_overlay: " + std::to_string(points.size()) + " kernel points requested, at most " +
                      std::to_string(cap) + " can be shown at once");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] < 0 || points[i] >= available)
      throw ConfigError("render_overlay: kernel point " + std::to_string(points[i]) + " out of range [0, " +
                        std::to_string(available) + ")");
    if (std::find(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(i), points[i]) !=
        points.begin() + static_cast<std::ptrdiff_t>(i))
      throw ConfigError("render_overlay: kernel point " + std::to_string(points[i]) + " listed twice");
  }
}

}  // namespace detail

inline std::vector<OverlayPoint> overlay_points(const OffsetField& field, const StrongOffsetSet& set,
                                                const std::vector<std::int64_t>& kernel_points,
                                                const OverlayOptions& opt = {}) {
  detail::check_kernel_points(kernel_points, field.kernel_points(), opt);
  std::vector<OverlayPoint> out;
  for (std::size_t c = 0; c < kernel_points.size(); ++c) {
    const std::int64_t k = kernel_points[c];
    const std::int64_t ki = k / field.kernel_w, kj = k % field.kernel_w;
    for (const auto& e : set.for_kernel_point(k)) {
      OverlayPoint p;
      p.kernel_point = k;
      p.color = static_cast<int>(c);
      p.base_y = static_cast<double>(e.oy * field.stride - field.padding + ki);
      p.base_x = static_cast<double>(e.ox * field.stride - field.padding + kj);
      p.y = p.base_y + e.dy;
      p.x = p.base_x + e.dx;
      const double ry = std::round(p.y), rx = std::round(p.x);
      const double max_y = static_cast<double>(field.input_h - 1), max_x = static_cast<double>(field.input_w - 1);
      p.clamped = ry < 0.0 || ry > max_y || rx < 0.0 || rx > max_x;
      p.py = static_cast<int>(std::clamp(ry, 0.0, max_y));
      p.px = static_cast<int>(std::clamp(rx, 0.0, max_x));
      out.push_back(p);
    }
  }
  return out;
}

/// Draws `points` over `base` (1 or 3 channels, any bit depth) and appends a
/// legend band below it holding one swatch per selected kernel point, in
/// selection order. In-image points are filled 3x3 squares; clamped
/// out-of-image points are hollow 3x3 rings. Output is 8-bit RGB.
inline Raster render_overlay(const Raster& base, const std::vector<OverlayPoint>& points, int kernel_point_count,
                             const OverlayOptions& opt = {}) {
  detail::validate_raster(base, "render_overlay");
  if (kernel_point_count < 0 || kernel_point_count > static_cast<int>(kOverlayPalette.size()))
    throw ConfigError("render_overlay: cannot draw a legend for " + std::to_string(kernel_point_count) +
                      " kernel points");
  Raster out;
  out.width = base.width;
  out.height = base.height + opt.legend_height;
  out.channels = 3;
  out.bit_depth = 8;
  out.samples.assign(static_cast<std::size_t>(out.width) * out.height * 3, 0);
  const double scale = 255.0 / base.max_value();
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src_c = base.channels == 3 ? c : 0;
        out.samples[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] =
            static_cast<std::uint16_t>(std::lround(base.at(y, x, src_c) * scale));
      }
  auto put = [&](int y, int x, const Rgb8& col, int y_max) {
    if (y < 0 || x < 0 || y >= y_max || x >= out.width) return;
    for (int c = 0; c < 3; ++c) out.samples[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] = col[c];
  };
  for (const auto& p : points) {
    if (p.color < 0 || p.color >= kernel_point_count) throw ConfigError("render_overlay: point colour out of range");
    const Rgb8& col = kOverlayPalette[static_cast<std::size_t>(p.color)];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (!p.clamped || dy != 0 || dx != 0) put(p.py + dy, p.px + dx, col, base.height);
  }
  const int swatch = std::max(1, opt.legend_height - 4);
  for (int i = 0; i < kernel_point_count; ++i)
    for (int y = 0; y < swatch; ++y)
      for (int x = 0; x < swatch; ++x)
        put(base.height + 2 + y, 2 + i * (swatch + 4) + x, kOverlayPalette[static_cast<std::size_t>(i)], out.height);
  return out;
}

/// Overlay of `set` restricted to `kernel_points`, written to `path` (PNG for
/// a .png extension, otherwise binary PPM).
inline Raster write_overlay(const std::filesystem::path& path, const Raster& base, const OffsetField& field,
                            const StrongOffsetSet& set, const std::vector<std::int64_t>& kernel_points,
                            const OverlayOptions& opt = {}) {
  const auto pts = overlay_points(field, set, kernel_points, opt);
  Raster img = render_overlay(base, pts, static_cast<int>(kernel_points.size()), opt);
  write_raster(path, img);
  return img;
}

}  // namespace traitnet
