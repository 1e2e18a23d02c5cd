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


// Training-time geometric augmentation applied identically to RGB and depth.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "traitnet/dataset.hpp"
#include "traitnet/deform_conv.hpp"
#include "traitnet/random.hpp"

namespace traitnet {

struct AugmentOptions {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double rotate_p = 1.0;
  double max_rotation_deg = 180.0;  // angle ~ U(-max, max)
  double shift_p = 1.0;
  double max_shift_frac = 0.1;  // per-axis shift ~ U(-f, f) * size

  /// Every probability zero: augment() is the identity.
  static AugmentOptions none() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}; }
};

/// One concrete draw. Shifts are in pixels, the angle in radians
/// (counter-clockwise in image coordinates with y pointing down).
struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  double angle = 0.0;
  double shift_y = 0.0;
  double shift_x = 0.0;
};

/// Always consumes the same number of draws so the stream stays aligned
/// regardless of which transforms fire.
inline AugmentParams draw_augment(const AugmentOptions& opt, std::int64_t h, std::int64_t w, Rng& rng) {
  AugmentParams p;
  const double u_h = rng.uniform(), u_v = rng.uniform();
  const double u_rp = rng.uniform(), u_angle = rng.uniform();
  const double u_sp = rng.uniform(), u_sy = rng.uniform(), u_sx = rng.uniform();
  p.hflip = u_h < opt.hflip_p;
  p.vflip = u_v < opt.vflip_p;
  if (u_rp < opt.rotate_p) p.angle = (2.0 * u_angle - 1.0) * opt.max_rotation_deg * std::numbers::pi / 180.0;
  if (u_sp < opt.shift_p) {
    p.shift_y = (2.0 * u_sy - 1.0) * opt.max_shift_frac * static_cast<double>(h);
    p.shift_x = (2.0 * u_sx - 1.0) * opt.max_shift_frac * static_cast<double>(w);
  }
  return p;
}

namespace detail {

inline Tensor flip_chw(const Tensor& t, bool horizontal) {
  const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<double> out(t.numel());
  auto src = t.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sy = horizontal ? y : h - 1 - y;
        const std::int64_t sx = horizontal ? w - 1 - x : x;
        out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
      }
  return Tensor::from(t.shape(), std::move(out));
}

// Source coordinate for output pixel (y, x) under rotation about the image
// centre followed by a shift.
struct InverseAffine {
  double cos_a, sin_a, cy, cx, ty, tx;

  void source(double y, double x, double& sy, double& sx) const {
    const double v = y - cy - ty, u = x - cx - tx;
    sx = cos_a * u + sin_a * v + cx;
    sy = -sin_a * u + cos_a * v + cy;
  }
};

inline Tensor warp_bilinear(const Tensor& t, const InverseAffine& m) {
  const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<double> out(t.numel());
  auto src = t.data();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double sy, sx;
      m.source(static_cast<double>(y), static_cast<double>(x), sy, sx);
      for (std::int64_t ch = 0; ch < c; ++ch)
        out[(ch * h + y) * w + x] = bilinear_sample(src.subspan(ch * h * w, h * w), h, w, sy, sx).value;
    }
  return Tensor::from(t.shape(), std::move(out));
}

inline Tensor warp_nearest(const Tensor& t, const InverseAffine& m) {
  const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<double> out(t.numel(), 0.0);
  auto src = t.data();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double sy, sx;
      m.source(static_cast<double>(y), static_cast<double>(x), sy, sx);
      const auto iy = static_cast<std::int64_t>(std::floor(sy + 0.5));
      const auto ix = static_cast<std::int64_t>(std::floor(sx + 0.5));
      if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = src[(ch * h + iy) * w + ix];
    }
  return Tensor::from(t.shape(), std::move(out));
}

}  // namespace detail

inline Sample flip_horizontal(const Sample& s) {
  Sample out = s;
  out.rgb = detail::flip_chw(s.rgb, true);
  out.depth = detail::flip_chw(s.depth, true);
  return out;
}

inline Sample flip_vertical(const Sample& s) {
  Sample out = s;
  out.rgb = detail::flip_chw(s.rgb, false);
  out.depth = detail::flip_chw(s.depth, false);
  return out;
}

/// Flips, then rotates about the centre and shifts. RGB is resampled
/// bilinearly, depth by nearest neighbour; uncovered pixels become 0 (the
/// channel mean after normalization). Traits are unchanged.
inline Sample apply_augment(const Sample& s, const AugmentParams& p) {
  Sample out = s;
  if (p.hflip) out = flip_horizontal(out);
  if (p.vflip) out = flip_vertical(out);
  if (p.angle != 0.0 || p.shift_y != 0.0 || p.shift_x != 0.0) {
    const detail::InverseAffine m{std::cos(p.angle),
                                  std::sin(p.angle),
                                  (static_cast<double>(s.height()) - 1.0) / 2.0,
                                  (static_cast<double>(s.width()) - 1.0) / 2.0,
                                  p.shift_y,
                                  p.shift_x};
    out.rgb = detail::warp_bilinear(out.rgb, m);
    out.depth = detail::warp_nearest(out.depth, m);
  }
  return out;
}

inline Sample augment(const Sample& s, Rng& rng, const AugmentOptions& opt = {}) {
  return apply_augment(s, draw_augment(opt, s.height(), s.width(), rng));
}

}  // namespace traitnet
