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


// Synthetic plant images with analytically known traits.
//
// Each image shows one elliptical plant with radial leaf stripes on a dark
// background; the depth channel is a top-down range image (mm) of a dome
// whose apex is the plant height. With s = kSceneWidthCm / size cm per pixel:
//
//   leaf_area    = (#pixels inside the ellipse) * s^2          cm^2
//   diameter     = 2 * semi_major_px * s                        cm
//   height       = dome apex height                             cm
//   fresh_weight = kFreshDensity * leaf_area * height           g
//   dry_weight   = dry_ratio(variety) * fresh_weight            g
//
// depth(y, x) = kCameraDistanceMm - 10 * height * sqrt(1 - q), q the squared
// normalized elliptical radius (q <= 1 inside the plant).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "traitnet/dataset.hpp"
#include "traitnet/image_io.hpp"
#include "traitnet/random.hpp"
#include "traitnet/traits.hpp"

namespace traitnet {

inline constexpr double kSceneWidthCm = 32.0;
inline constexpr double kFreshDensity = 0.05;  // k1, g / cm^3
inline constexpr double kCameraDistanceMm = 1000.0;
inline constexpr double kMinRadiusPx = 2.0;

struct Variety {
  const char* name;
  std::array<double, 3> color;
  int leaves;
  double dry_ratio;  // k2
};

inline constexpr std::array<Variety, 4> kSyntheticVarieties = {{
    {"green_leaf", {70.0, 160.0, 60.0}, 5, 0.04},
    {"red_leaf", {150.0, 50.0, 60.0}, 7, 0.05},
    {"butterhead", {150.0, 200.0, 90.0}, 9, 0.06},
    {"romaine", {35.0, 110.0, 45.0}, 11, 0.07},
}};

inline double synthetic_scale(int size) { return kSceneWidthCm / static_cast<double>(size); }

/// Geometry of one rendered plant, in pixels (centre may be fractional).
struct PlantSpec {
  double cy = 0.0, cx = 0.0;
  double semi_major = 0.0, semi_minor = 0.0;
  double theta = 0.0;  // major-axis angle, radians
  double height_cm = 0.0;
  int variety = 0;
};

namespace detail {

// Squared normalized radius of pixel centre (y, x); <= 1 inside the plant.
inline double ellipse_q(const PlantSpec& p, double y, double x, double& angle) {
  const double dy = y - p.cy, dx = x - p.cx;
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double u = (c * dx + s * dy) / p.semi_major;
  const double v = (-s * dx + c * dy) / p.semi_minor;
  angle = std::atan2(v, u);
  return u * u + v * v;
}

}  // namespace detail

/// Draws the plant; `rng` only supplies pixel noise. Traits follow the
/// definitions in the file comment.
inline Sample render_plant(const PlantSpec& p, int size, Rng& rng, const std::string& id = "plant") {
  if (p.semi_major < kMinRadiusPx || p.semi_minor < kMinRadiusPx)
    throw ConfigError("render_plant: radii must be at least " + std::to_string(kMinRadiusPx) + " px");
  if (p.variety < 0 || p.variety >= static_cast<int>(kSyntheticVarieties.size()))
    throw ConfigError("render_plant: variety index out of range");
  const Variety& var = kSyntheticVarieties[static_cast<std::size_t>(p.variety)];
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  std::vector<double> rgb(3 * hw), depth(hw);
  std::int64_t inside = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * size + x;
      double angle = 0.0;
      const double q = detail::ellipse_q(p, y, x, angle);
      if (q <= 1.0) {
        ++inside;
        const double stripe = 0.75 + 0.25 * std::cos(var.leaves * angle);
        const double shade = 1.0 - 0.25 * q;
        for (int c = 0; c < 3; ++c) {
          const double v = var.color[c] * stripe * shade + rng.uniform(-6.0, 6.0);
          rgb[c * hw + px] = std::clamp(std::round(v), 0.0, 255.0);
        }
        depth[px] = std::round(kCameraDistanceMm - 10.0 * p.height_cm * std::sqrt(1.0 - q));
      } else {
        const std::array<double, 3> bg = {28.0, 22.0, 16.0};
        for (int c = 0; c < 3; ++c) rgb[c * hw + px] = std::clamp(std::round(bg[c] + rng.uniform(-4.0, 4.0)), 0.0, 255.0);
        depth[px] = kCameraDistanceMm;
      }
    }
  const double s = synthetic_scale(size);
  Sample out;
  out.id = id;
  out.variety = var.name;
  out.rgb = Tensor::from({3, size, size}, std::move(rgb));
  out.depth = Tensor::from({1, size, size}, std::move(depth));
  TraitVector& t = out.traits;
  t[Trait::kLeafArea] = static_cast<double>(inside) * s * s;
  t[Trait::kDiameter] = 2.0 * p.semi_major * s;
  t[Trait::kHeight] = p.height_cm;
  t[Trait::kFreshWeight] = kFreshDensity * t[Trait::kLeafArea] * t[Trait::kHeight];
  t[Trait::kDryWeight] = var.dry_ratio * t[Trait::kFreshWeight];
  validate_traits(t, id);
  return out;
}

/// Random plant at a latent growth stage g ~ U(0, 1): larger, taller
/// plants as g grows, with per-plant jitter.
inline PlantSpec draw_plant(int size, Rng& rng) {
  const double S = static_cast<double>(size);
  PlantSpec p;
  const double g = rng.uniform();
  p.variety = static_cast<int>(rng.below(kSyntheticVarieties.size()));
  p.semi_major = std::min(S * (0.10 + 0.22 * g) * rng.uniform(0.9, 1.1), 0.34 * S);
  p.semi_minor = p.semi_major * rng.uniform(0.75, 1.0);
  p.semi_major = std::max(p.semi_major, kMinRadiusPx);
  p.semi_minor = std::max(p.semi_minor, kMinRadiusPx);
  p.theta = rng.uniform(0.0, std::numbers::pi);
  p.cy = (S - 1.0) / 2.0 + rng.uniform(-0.05, 0.05) * S;
  p.cx = (S - 1.0) / 2.0 + rng.uniform(-0.05, 0.05) * S;
  p.height_cm = (3.0 + 17.0 * g) * rng.uniform(0.85, 1.15);
  return p;
}

struct SyntheticOptions {
  int count = 400;
  int size = 64;
  int test_count = -1;  // -1: min(50, count / 8)
};

struct SyntheticDataset {
  Manifest manifest;
  std::vector<Sample> samples;  // id order, matching manifest.entries
};

inline SyntheticDataset generate_synthetic(const SyntheticOptions& opt, Rng& rng) {
  if (opt.count < 1) throw ConfigError("generate_synthetic: count must be >= 1");
  if (opt.size < 16) throw ConfigError("generate_synthetic: image size must be >= 16");
  const int test_count = opt.test_count < 0 ? std::min(50, opt.count / 8) : opt.test_count;
  if (test_count >= opt.count) throw ConfigError("generate_synthetic: test_count must be below count");
  SyntheticDataset ds;
  for (const auto& v : kSyntheticVarieties) ds.manifest.varieties.emplace_back(v.name);
  for (int i = 0; i < opt.count; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%04d", i);
    const PlantSpec spec = draw_plant(opt.size, rng);
    Sample s = render_plant(spec, opt.size, rng, id);
    ManifestEntry e;
    e.id = id;
    e.rgb_path = std::string("images/") + id + "_rgb.png";
    e.depth_path = std::string("images/") + id + "_depth.png";
    e.variety = s.variety;
    e.traits = s.traits;
    ds.manifest.entries.push_back(std::move(e));
    ds.samples.push_back(std::move(s));
  }
  std::vector<std::string> ids;
  for (const auto& e : ds.manifest.entries) ids.push_back(e.id);
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(test_count));
  std::sort(ids.begin(), ids.end());
  ds.manifest.test_ids = std::move(ids);
  return ds;
}

/// Writes manifest.json plus 8-bit RGB / 16-bit depth PNGs under `dir`.
inline void write_dataset(const std::filesystem::path& dir, SyntheticDataset& ds) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& e = ds.manifest.entries[i];
    write_raster(dir / e.rgb_path, tensor_to_raster(ds.samples[i].rgb, 8));
    write_raster(dir / e.depth_path, tensor_to_raster(ds.samples[i].depth, 16));
  }
  ds.manifest.root = dir;
  save_manifest(dir / "manifest.json", ds.manifest);
}

}  // namespace traitnet
