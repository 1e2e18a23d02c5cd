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


// Samples, manifest files, cropping, normalization, splitting and batching.
//
// Manifest schema (UTF-8 JSON, schema_version 1):
//
//   {
//     "schema_version": 1,
//     "trait_names": ["fresh_weight", "dry_weight", "height", "diameter", "leaf_area"],
//     "varieties": ["green_leaf", ...],
//     "test_ids": ["s0007", ...],
//     "samples": {
//       "s0000": {"rgb": "images/s0000_rgb.png", "depth": "images/s0000_depth.png",
//                 "variety": "green_leaf",
//                 "traits": {"fresh_weight": 12.5, "dry_weight": 0.6, ...}},
//       ...
//     }
//   }
//
// Image paths are relative to the manifest's directory. RGB is 8-bit, depth a
// 16-bit single channel; PNG or binary netpbm.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "traitnet/errors.hpp"
#include "traitnet/image_io.hpp"
#include "traitnet/random.hpp"
#include "traitnet/tensor.hpp"
#include "traitnet/traits.hpp"

namespace traitnet {

inline constexpr int kManifestSchemaVersion = 1;

struct Sample {
  std::string id;
  Tensor rgb;    // [3,H,W]
  Tensor depth;  // [1,H,W]
  TraitVector traits;
  std::string variety;

  std::int64_t height() const { return rgb.dim(1); }
  std::int64_t width() const { return rgb.dim(2); }
};

inline void validate_sample(const Sample& s) {
  if (!s.rgb.defined() || s.rgb.ndim() != 3 || s.rgb.dim(0) != 3)
    throw DimensionError("sample", "channels", s.id + ": rgb must be [3,H,W]");
  if (!s.depth.defined() || s.depth.ndim() != 3 || s.depth.dim(0) != 1)
    throw DimensionError("sample", "channels", s.id + ": depth must be [1,H,W]");
  if (s.rgb.dim(1) != s.depth.dim(1) || s.rgb.dim(2) != s.depth.dim(2))
    throw DimensionError("sample", "spatial",
                         s.id + ": rgb " + shape_str(s.rgb.shape()) + " and depth " + shape_str(s.depth.shape()) +
                             " differ in size");
  validate_traits(s.traits, s.id);
}

struct ManifestEntry {
  std::string id;
  std::string rgb_path;
  std::string depth_path;
  std::string variety;
  TraitVector traits;
};

struct Manifest {
  std::vector<std::string> varieties;
  std::vector<std::string> test_ids;
  std::vector<ManifestEntry> entries;  // sorted by id
  std::filesystem::path root;          // directory image paths are relative to

  const ManifestEntry* find(const std::string& id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), id,
                               [](const ManifestEntry& e, const std::string& key) { return e.id < key; });
    return it != entries.end() && it->id == id ? &*it : nullptr;
  }
};

inline nlohmann::json traits_to_json(const TraitVector& t) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumTraits; ++i) j[std::string(kTraitNames[i])] = t.values[i];
  return j;
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["trait_names"] = std::vector<std::string>(kTraitNames.begin(), kTraitNames.end());
  j["varieties"] = m.varieties;
  j["test_ids"] = m.test_ids;
  nlohmann::json samples = nlohmann::json::object();
  for (const auto& e : m.entries)
    samples[e.id] = {{"rgb", e.rgb_path}, {"depth", e.depth_path}, {"variety", e.variety},
                     {"traits", traits_to_json(e.traits)}};
  j["samples"] = std::move(samples);
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j, const std::string& source) {
  auto fail = [&](const std::string& reason) -> ParseError { return ParseError(source, reason); };
  try {
    if (!j.is_object()) throw fail("manifest must be a JSON object");
    if (j.value("schema_version", -1) != kManifestSchemaVersion)
      throw fail("unsupported manifest schema_version (expected " + std::to_string(kManifestSchemaVersion) + ")");
    if (j.contains("trait_names") &&
        j.at("trait_names").get<std::vector<std::string>>() !=
            std::vector<std::string>(kTraitNames.begin(), kTraitNames.end()))
      throw fail("trait_names must be [fresh_weight, dry_weight, height, diameter, leaf_area]");
    Manifest m;
    m.varieties = j.at("varieties").get<std::vector<std::string>>();
    m.test_ids = j.value("test_ids", std::vector<std::string>{});
    const std::set<std::string> varieties(m.varieties.begin(), m.varieties.end());
    for (const auto& [id, e] : j.at("samples").items()) {
      ManifestEntry entry;
      entry.id = id;
      entry.rgb_path = e.at("rgb").get<std::string>();
      entry.depth_path = e.at("depth").get<std::string>();
      entry.variety = e.at("variety").get<std::string>();
      if (!varieties.contains(entry.variety))
        throw fail("sample " + id + " has undeclared variety '" + entry.variety + "'");
      const auto& traits = e.at("traits");
      for (std::size_t i = 0; i < kNumTraits; ++i) {
        const std::string name(kTraitNames[i]);
        if (!traits.contains(name)) throw fail("sample " + id + " is missing trait " + name);
        entry.traits.values[i] = traits.at(name).get<double>();
      }
      try {
        validate_traits(entry.traits, "sample " + id);
      } catch (const DataError& err) {
        throw fail(err.what());
      }
      m.entries.push_back(std::move(entry));
    }
    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (const auto& id : m.test_ids)
      if (m.find(id) == nullptr) throw fail("test id " + id + " is not a sample in the manifest");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = detail::read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), std::string("manifest is not valid JSON: ") + e.what());
  }
  Manifest m = manifest_from_json(j, path.string());
  m.root = path.parent_path();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  detail::write_file_bytes(path, manifest_to_json(m).dump(2) + "\n");
}

inline Sample load_sample(const Manifest& m, const ManifestEntry& e) {
  Sample s;
  s.id = e.id;
  s.traits = e.traits;
  s.variety = e.variety;
  const Raster rgb = read_raster(m.root / e.rgb_path);
  const Raster depth = read_raster(m.root / e.depth_path);
  if (rgb.channels != 3) throw ParseError((m.root / e.rgb_path).string(), "rgb image must have 3 channels");
  if (depth.channels != 1) throw ParseError((m.root / e.depth_path).string(), "depth image must have 1 channel");
  s.rgb = raster_to_tensor(rgb);
  s.depth = raster_to_tensor(depth);
  validate_sample(s);
  return s;
}

/// Loads every sample of the manifest, in id order.
inline std::vector<Sample> load_samples(const Manifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(m, e));
  return out;
}

// ---------------------------------------------------------------------------
// Crop
// ---------------------------------------------------------------------------

/// Half-open window [y0, y1) x [x0, x1).
struct CropWindow {
  std::int64_t y0 = 200, y1 = 900, x0 = 650, x1 = 1450;

  std::int64_t height() const { return y1 - y0; }
  std::int64_t width() const { return x1 - x0; }
  bool fits(std::int64_t h, std::int64_t w) const { return 0 <= y0 && y0 < y1 && y1 <= h && 0 <= x0 && x0 < x1 && x1 <= w; }
  bool operator==(const CropWindow&) const = default;
};

/// Window used for the 1080x1920 greenhouse captures: 700 x 800 pixels.
inline constexpr CropWindow kDefaultCrop{200, 900, 650, 1450};

inline Tensor crop_chw(const Tensor& t, const CropWindow& win) {
  const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (!win.fits(h, w))
    throw ConfigError("crop window y[" + std::to_string(win.y0) + "," + std::to_string(win.y1) + ") x[" +
                      std::to_string(win.x0) + "," + std::to_string(win.x1) + ") does not fit a " +
                      std::to_string(h) + "x" + std::to_string(w) + " image");
  std::vector<double> out(static_cast<std::size_t>(c * win.height() * win.width()));
  auto src = t.data();
  std::size_t k = 0;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = win.y0; y < win.y1; ++y)
      for (std::int64_t x = win.x0; x < win.x1; ++x) out[k++] = src[(ch * h + y) * w + x];
  return Tensor::from({c, win.height(), win.width()}, std::move(out));
}

inline Sample crop(const Sample& s, const CropWindow& win) {
  Sample out = s;
  out.rgb = crop_chw(s.rgb, win);
  out.depth = crop_chw(s.depth, win);
  return out;
}

inline Sample crop(const Sample& s, std::int64_t y0, std::int64_t y1, std::int64_t x0, std::int64_t x1) {
  return crop(s, CropWindow{y0, y1, x0, x1});
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 4> kChannelNames = {"red", "green", "blue", "depth"};

/// Channel order R, G, B, depth. `source_ids` records which samples the
/// statistics were computed from, so leakage can be detected later.
struct NormalizationStats {
  std::array<double, 4> mean{};
  std::array<double, 4> std{};
  std::vector<std::string> source_ids;  // sorted

  bool operator==(const NormalizationStats&) const = default;
};

inline nlohmann::json stats_to_json(const NormalizationStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"source_ids", s.source_ids}};
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  s.mean = j.at("mean").get<std::array<double, 4>>();
  s.std = j.at("std").get<std::array<double, 4>>();
  s.source_ids = j.value("source_ids", std::vector<std::string>{});
  for (std::size_t c = 0; c < 4; ++c)
    if (!(s.std[c] > 0.0)) throw ConfigError("normalization std for channel " + std::string(kChannelNames[c]) + " must be > 0");
  return s;
}

namespace detail {

// Channel c of the 4-channel view: 0..2 from rgb, 3 from depth.
inline std::span<const double> channel_plane(const Sample& s, std::size_t c) {
  const std::size_t hw = static_cast<std::size_t>(s.height() * s.width());
  if (c < 3) return s.rgb.data().subspan(c * hw, hw);
  return s.depth.data();
}

}  // namespace detail

/// Population mean and standard deviation per channel over every pixel of
/// every sample. Call with the TRAIN split only.
inline NormalizationStats compute_stats(std::span<const Sample> train) {
  if (train.empty()) throw DataError("compute_stats: no samples");
  NormalizationStats st;
  for (std::size_t c = 0; c < 4; ++c) {
    double total = 0.0;
    double count = 0.0;
    for (const auto& s : train) {
      for (double v : detail::channel_plane(s, c)) total += v;
      count += static_cast<double>(s.height() * s.width());
    }
    const double mean = total / count;
    double sq = 0.0;
    for (const auto& s : train)
      for (double v : detail::channel_plane(s, c)) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / count);
    if (!(sd > 0.0) || !std::isfinite(sd))
      throw DataError("compute_stats: channel " + std::string(kChannelNames[c]) +
                      " is constant over the train split (std 0), cannot normalize");
    st.mean[c] = mean;
    st.std[c] = sd;
  }
  for (const auto& s : train) st.source_ids.push_back(s.id);
  std::sort(st.source_ids.begin(), st.source_ids.end());
  return st;
}

inline Sample normalize(const Sample& s, const NormalizationStats& st) {
  Sample out = s;
  std::vector<double> rgb(s.rgb.data().begin(), s.rgb.data().end());
  std::vector<double> depth(s.depth.data().begin(), s.depth.data().end());
  const std::size_t hw = static_cast<std::size_t>(s.height() * s.width());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p) rgb[c * hw + p] = (rgb[c * hw + p] - st.mean[c]) / st.std[c];
  for (auto& v : depth) v = (v - st.mean[3]) / st.std[3];
  out.rgb = Tensor::from(s.rgb.shape(), std::move(rgb));
  out.depth = Tensor::from(s.depth.shape(), std::move(depth));
  return out;
}

inline std::vector<Sample> normalize_all(std::span<const Sample> samples, const NormalizationStats& st) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(normalize(s, st));
  return out;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<std::string> test_ids;
  double train_fraction = 0.75;
  // When both are set they override train_fraction and must sum to the
  // number of non-test samples (e.g. 270 / 68 of 338).
  std::optional<std::size_t> train_count;
  std::optional<std::size_t> val_count;
  std::uint64_t seed = 0;
  bool allow_empty_val = false;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Partitions the manifest. Non-test ids are shuffled with the seed; the
/// train size is floor(train_fraction * N), the remainder is validation.
inline Split split(const Manifest& m, const SplitSpec& spec) {
  if (m.entries.empty()) throw DataError("split: manifest has no samples");
  std::set<std::string> test(spec.test_ids.begin(), spec.test_ids.end());
  if (test.size() != spec.test_ids.size()) throw ConfigError("split: duplicate test ids");
  for (const auto& id : test)
    if (m.find(id) == nullptr) throw DataError("split: test id " + id + " is not in the manifest");
  std::vector<std::string> pool;
  for (const auto& e : m.entries)
    if (!test.contains(e.id)) pool.push_back(e.id);
  std::size_t n_train = 0;
  if (spec.train_count || spec.val_count) {
    if (!spec.train_count || !spec.val_count) throw ConfigError("split: give both train_count and val_count");
    if (*spec.train_count + *spec.val_count != pool.size())
      throw ConfigError("split: train_count + val_count = " + std::to_string(*spec.train_count + *spec.val_count) +
                        " but there are " + std::to_string(pool.size()) + " non-test samples");
    n_train = *spec.train_count;
  } else {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
      throw ConfigError("split: train_fraction must be in (0, 1]");
    n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(pool.size())));
  }
  if (n_train == 0) throw DataError("split: train split would be empty");
  if (n_train == pool.size() && !spec.allow_empty_val)
    throw ConfigError("split: validation split would be empty; set allow_empty_val to permit this");
  Rng rng(spec.seed);
  rng.shuffle(pool);
  Split out;
  out.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  out.test.assign(test.begin(), test.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

/// Throws DataError if normalization statistics drew on any val/test sample.
inline void check_no_leakage(const NormalizationStats& st, const Split& sp) {
  const std::set<std::string> held(sp.val.begin(), sp.val.end());
  std::set<std::string> all_held = held;
  all_held.insert(sp.test.begin(), sp.test.end());
  std::vector<std::string> leaked;
  for (const auto& id : st.source_ids)
    if (all_held.contains(id)) leaked.push_back(id);
  if (!leaked.empty()) {
    std::string list;
    for (std::size_t i = 0; i < leaked.size() && i < 5; ++i) list += (i ? ", " : "") + leaked[i];
    throw DataError("normalization statistics include " + std::to_string(leaked.size()) +
                    " validation/test sample(s): " + list);
  }
}

/// Samples with the given ids, in the order of `ids`.
inline std::vector<Sample> select(std::span<const Sample> samples, const std::vector<std::string>& ids) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("sample " + id + " not loaded");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor rgb;      // [N,3,H,W]
  Tensor depth;    // [N,1,H,W]
  Tensor targets;  // [N,5] in kTraitNames order
  std::vector<std::string> ids;

  std::int64_t size() const { return targets.dim(0); }
};

inline Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const Sample& first = samples[indices[0]];
  const std::int64_t h = first.height(), w = first.width(), n = static_cast<std::int64_t>(indices.size());
  std::vector<double> rgb, depth, targets;
  rgb.reserve(static_cast<std::size_t>(n * 3 * h * w));
  depth.reserve(static_cast<std::size_t>(n * h * w));
  targets.reserve(static_cast<std::size_t>(n) * kNumTraits);
  Batch b;
  for (auto i : indices) {
    const Sample& s = samples[i];
    if (s.height() != h || s.width() != w)
      throw DimensionError("make_batch", "spatial", "sample " + s.id + " is " + shape_str(s.rgb.shape()) +
                                                        ", batch expects " + std::to_string(h) + "x" + std::to_string(w));
    rgb.insert(rgb.end(), s.rgb.data().begin(), s.rgb.data().end());
    depth.insert(depth.end(), s.depth.data().begin(), s.depth.data().end());
    targets.insert(targets.end(), s.traits.values.begin(), s.traits.values.end());
    b.ids.push_back(s.id);
  }
  b.rgb = Tensor::from({n, 3, h, w}, std::move(rgb));
  b.depth = Tensor::from({n, 1, h, w}, std::move(depth));
  b.targets = Tensor::from({n, static_cast<std::int64_t>(kNumTraits)}, std::move(targets));
  return b;
}

inline Batch make_batch(std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(samples, idx);
}

}  // namespace traitnet
