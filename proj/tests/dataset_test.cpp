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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support/temp_dir.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/random.hpp"

namespace traitnet {
namespace {

Sample random_sample(const std::string& id, std::int64_t h, std::int64_t w, Rng& rng) {
  Sample s;
  s.id = id;
  std::vector<double> rgb(static_cast<std::size_t>(3 * h * w)), depth(static_cast<std::size_t>(h * w));
  for (auto& v : rgb) v = std::floor(rng.uniform(0.0, 256.0));
  for (auto& v : depth) v = std::floor(rng.uniform(500.0, 1500.0));
  s.rgb = Tensor::from({3, h, w}, std::move(rgb));
  s.depth = Tensor::from({1, h, w}, std::move(depth));
  s.traits.values = {10.0, 1.0, 5.0, 8.0, 40.0};
  s.variety = "a";
  return s;
}

Sample constant_sample(const std::string& id, double value) {
  Sample s;
  s.id = id;
  s.rgb = Tensor::full({3, 1, 1}, value);
  s.depth = Tensor::full({1, 1, 1}, value);
  s.variety = "a";
  return s;
}

Manifest manifest_with(int n, int n_test) {
  Manifest m;
  m.varieties = {"a", "b"};
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.id = "id" + std::to_string(1000 + i);
    e.rgb_path = e.id + "_rgb.png";
    e.depth_path = e.id + "_depth.png";
    e.variety = i % 2 ? "a" : "b";
    e.traits.values = {2.0 * i, 0.1 * i, 1.0, 2.0, 3.0};
    m.entries.push_back(e);
  }
  for (int i = 0; i < n_test; ++i) m.test_ids.push_back(m.entries[static_cast<std::size_t>(i * 3)].id);
  return m;
}

// --- traits / manifest ------------------------------------------------------

TEST(TraitsTest, ValidationRejectsBadValues) {
  TraitVector t;
  t.values = {10, 1, 5, 8, 40};
  EXPECT_NO_THROW(validate_traits(t, "x"));
  t[Trait::kHeight] = -1;
  EXPECT_THROW(validate_traits(t, "x"), DataError);
  t[Trait::kHeight] = std::nan("");
  EXPECT_THROW(validate_traits(t, "x"), DataError);
  t[Trait::kHeight] = 5;
  t[Trait::kDryWeight] = 11;
  EXPECT_THROW(validate_traits(t, "x"), DataError);
}

TEST(TraitsTest, NameLookup) {
  for (auto t : kAllTraits) EXPECT_EQ(trait_from_name(trait_name(t)), t);
  EXPECT_THROW(trait_from_name("weight"), ConfigError);
}

TEST(ManifestTest, JsonRoundTrip) {
  const Manifest m = manifest_with(6, 2);
  const Manifest back = manifest_from_json(manifest_to_json(m), "m.json");
  ASSERT_EQ(back.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].id, m.entries[i].id);
    EXPECT_EQ(back.entries[i].rgb_path, m.entries[i].rgb_path);
    EXPECT_EQ(back.entries[i].variety, m.entries[i].variety);
    EXPECT_EQ(back.entries[i].traits, m.entries[i].traits);
  }
  EXPECT_EQ(back.test_ids, m.test_ids);
  EXPECT_EQ(back.varieties, m.varieties);
}

TEST(ManifestTest, RejectsMalformedDocuments) {
  auto j = manifest_to_json(manifest_with(3, 0));
  auto bad_version = j;
  bad_version["schema_version"] = 2;
  EXPECT_THROW(manifest_from_json(bad_version, "m"), ParseError);
  auto bad_variety = j;
  bad_variety["samples"]["id1000"]["variety"] = "zzz";
  EXPECT_THROW(manifest_from_json(bad_variety, "m"), ParseError);
  auto missing_trait = j;
  missing_trait["samples"]["id1000"]["traits"].erase("height");
  EXPECT_THROW(manifest_from_json(missing_trait, "m"), ParseError);
  auto bad_test = j;
  bad_test["test_ids"] = {"nope"};
  EXPECT_THROW(manifest_from_json(bad_test, "m"), ParseError);
  auto bad_trait = j;
  bad_trait["samples"]["id1001"]["traits"]["dry_weight"] = 1e9;
  EXPECT_THROW(manifest_from_json(bad_trait, "m"), ParseError);
}

TEST(ManifestTest, LoadFromDiskResolvesImagePaths) {
  testing::TempDir dir("manifest");
  Rng rng(3);
  Manifest m = manifest_with(2, 0);
  std::vector<Sample> expected;
  for (const auto& e : m.entries) {
    Sample s = random_sample(e.id, 4, 5, rng);
    write_raster(dir / e.rgb_path, tensor_to_raster(s.rgb, 8));
    write_raster(dir / e.depth_path, tensor_to_raster(s.depth, 16));
    expected.push_back(s);
  }
  save_manifest(dir / "manifest.json", m);
  const Manifest loaded = load_manifest(dir / "manifest.json");
  const auto samples = load_samples(loaded);
  ASSERT_EQ(samples.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(std::ranges::equal(samples[i].rgb.data(), expected[i].rgb.data()));
    EXPECT_TRUE(std::ranges::equal(samples[i].depth.data(), expected[i].depth.data()));
    EXPECT_EQ(samples[i].traits, m.entries[i].traits);
  }
}

TEST(ManifestTest, InvalidJsonIsParseError) {
  testing::TempDir dir("manifest_bad");
  detail::write_file_bytes(dir / "manifest.json", "{\"schema_version\": 1,");
  EXPECT_THROW(load_manifest(dir / "manifest.json"), ParseError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), ParseError);
}

// --- crop -------------------------------------------------------------------

TEST(CropTest, DefaultWindowOnFullFrame) {
  Sample s;
  s.id = "frame";
  std::vector<double> rgb(3 * 1080 * 1920), depth(1080 * 1920);
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<double>(i % 7);
  s.rgb = Tensor::from({3, 1080, 1920}, std::move(rgb));
  s.depth = Tensor::from({1, 1080, 1920}, std::move(depth));
  const Sample c = crop(s, kDefaultCrop);
  EXPECT_EQ(c.rgb.shape(), (Shape{3, 700, 800}));
  EXPECT_EQ(c.depth.shape(), (Shape{1, 700, 800}));
  // Top-left of the crop is source (200, 650); bottom-right is (899, 1449).
  EXPECT_EQ(c.depth.data()[0], 200.0 * 1920 + 650);
  EXPECT_EQ(c.depth.data().back(), 899.0 * 1920 + 1449);
}

TEST(CropTest, FullWindowIsIdentity) {
  Rng rng(1);
  const Sample s = random_sample("s", 6, 9, rng);
  const Sample c = crop(s, 0, 6, 0, 9);
  EXPECT_TRUE(std::ranges::equal(c.rgb.data(), s.rgb.data()));
  EXPECT_TRUE(std::ranges::equal(c.depth.data(), s.depth.data()));
  EXPECT_EQ(c.traits, s.traits);
}

TEST(CropTest, OutOfBoundsWindowThrows) {
  Rng rng(1);
  const Sample s = random_sample("s", 6, 9, rng);
  EXPECT_THROW(crop(s, 0, 7, 0, 9), ConfigError);
  EXPECT_THROW(crop(s, 3, 3, 0, 9), ConfigError);
  EXPECT_THROW(crop(s, -1, 4, 0, 9), ConfigError);
  EXPECT_THROW(crop(s, kDefaultCrop), ConfigError);
}

// --- normalization ------------------------------------------------------------

TEST(NormalizeTest, TwoImageExample) {
  const std::vector<Sample> train = {constant_sample("a", 0.0), constant_sample("b", 2.0)};
  const auto st = compute_stats(train);
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(st.mean[c], 1.0);
    EXPECT_EQ(st.std[c], 1.0);
  }
  EXPECT_EQ(normalize(train[0], st).rgb.data()[0], -1.0);
  EXPECT_EQ(normalize(train[1], st).depth.data()[0], 1.0);
}

TEST(NormalizeTest, ConstantChannelThrows) {
  const std::vector<Sample> train = {constant_sample("a", 4.0), constant_sample("b", 4.0)};
  EXPECT_THROW(compute_stats(train), DataError);
  EXPECT_THROW(compute_stats(std::vector<Sample>{}), DataError);
}

TEST(NormalizeTest, NormalizedTrainSetIsStandardized) {
  Rng rng(7);
  std::vector<Sample> train;
  for (int i = 0; i < 5; ++i) train.push_back(random_sample("t" + std::to_string(i), 7, 6, rng));
  const auto st = compute_stats(train);
  const auto norm = normalize_all(train, st);
  for (std::size_t c = 0; c < 4; ++c) {
    // Independent recomputation over the normalized data.
    double sum = 0, n = 0;
    std::vector<double> all;
    for (const auto& s : norm) {
      const std::size_t hw = 42;
      auto plane = c < 3 ? s.rgb.data().subspan(c * hw, hw) : s.depth.data();
      all.insert(all.end(), plane.begin(), plane.end());
    }
    for (double v : all) sum += v, n += 1;
    const double mean = sum / n;
    double sq = 0;
    for (double v : all) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9) << "channel " << c;
    EXPECT_NEAR(std::sqrt(sq / n), 1.0, 1e-9) << "channel " << c;
  }
}

TEST(NormalizeTest, StatsJsonRoundTrip) {
  Rng rng(8);
  std::vector<Sample> train = {random_sample("x", 3, 3, rng), random_sample("y", 3, 3, rng)};
  const auto st = compute_stats(train);
  EXPECT_EQ(stats_from_json(nlohmann::json::parse(stats_to_json(st).dump())), st);
}

TEST(LeakageTest, DetectsValidationOrTestSamplesInStats) {
  Rng rng(9);
  std::vector<Sample> all;
  for (int i = 0; i < 8; ++i) all.push_back(random_sample("id" + std::to_string(i), 3, 3, rng));
  Split sp{{"id0", "id1", "id2", "id3", "id4"}, {"id5", "id6"}, {"id7"}};
  const auto clean = compute_stats(select(all, sp.train));
  EXPECT_NO_THROW(check_no_leakage(clean, sp));
  auto with_val = sp.train;
  with_val.push_back("id6");
  EXPECT_THROW(check_no_leakage(compute_stats(select(all, with_val)), sp), DataError);
  auto with_test = sp.train;
  with_test.push_back("id7");
  EXPECT_THROW(check_no_leakage(compute_stats(select(all, with_test)), sp), DataError);
}

// --- split --------------------------------------------------------------------

TEST(SplitTest, FractionFloorsTrainCount) {
  const Manifest m = manifest_with(388, 50);
  SplitSpec spec;
  spec.test_ids = m.test_ids;
  spec.seed = 4;
  const Split sp = split(m, spec);
  EXPECT_EQ(sp.train.size(), 253u);
  EXPECT_EQ(sp.val.size(), 85u);
  EXPECT_EQ(sp.test.size(), 50u);
}

TEST(SplitTest, ExplicitCountsReproduce270And68) {
  const Manifest m = manifest_with(388, 50);
  SplitSpec spec;
  spec.test_ids = m.test_ids;
  spec.train_count = 270;
  spec.val_count = 68;
  const Split sp = split(m, spec);
  EXPECT_EQ(sp.train.size(), 270u);
  EXPECT_EQ(sp.val.size(), 68u);
  spec.val_count = 60;
  EXPECT_THROW(split(m, spec), ConfigError);
}

TEST(SplitTest, PartitionsManifestWithoutLeakingTestIds) {
  const Manifest m = manifest_with(40, 6);
  SplitSpec spec;
  spec.test_ids = m.test_ids;
  const Split sp = split(m, spec);
  std::multiset<std::string> seen;
  seen.insert(sp.train.begin(), sp.train.end());
  seen.insert(sp.val.begin(), sp.val.end());
  seen.insert(sp.test.begin(), sp.test.end());
  EXPECT_EQ(seen.size(), 40u);
  for (const auto& e : m.entries) EXPECT_EQ(seen.count(e.id), 1u) << e.id;
  const std::set<std::string> test(m.test_ids.begin(), m.test_ids.end());
  for (const auto& id : sp.train) EXPECT_FALSE(test.contains(id));
  for (const auto& id : sp.val) EXPECT_FALSE(test.contains(id));
}

TEST(SplitTest, DeterministicPerSeed) {
  const Manifest m = manifest_with(60, 5);
  SplitSpec spec;
  spec.test_ids = m.test_ids;
  spec.seed = 11;
  const Split a = split(m, spec), b = split(m, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  spec.seed = 12;
  EXPECT_NE(split(m, spec).train, a.train);
}

TEST(SplitTest, EmptyValidationNeedsFlag) {
  const Manifest m = manifest_with(10, 2);
  SplitSpec spec;
  spec.test_ids = m.test_ids;
  spec.train_fraction = 1.0;
  EXPECT_THROW(split(m, spec), ConfigError);
  spec.allow_empty_val = true;
  const Split sp = split(m, spec);
  EXPECT_EQ(sp.train.size(), 8u);
  EXPECT_TRUE(sp.val.empty());
}

TEST(SplitTest, RejectsBadInputs) {
  Manifest empty;
  EXPECT_THROW(split(empty, {}), DataError);
  const Manifest m = manifest_with(10, 0);
  SplitSpec spec;
  spec.test_ids = {"missing"};
  EXPECT_THROW(split(m, spec), DataError);
  spec.test_ids = {};
  spec.train_fraction = 0.0;
  EXPECT_THROW(split(m, spec), ConfigError);
}

// --- batching -------------------------------------------------------------------

TEST(BatchTest, StacksSamplesInIndexOrder) {
  Rng rng(2);
  std::vector<Sample> s = {random_sample("a", 2, 3, rng), random_sample("b", 2, 3, rng)};
  s[1].traits.values = {5, 4, 3, 2, 1};
  const std::vector<std::size_t> idx = {1, 0};
  const Batch b = make_batch(s, idx);
  EXPECT_EQ(b.rgb.shape(), (Shape{2, 3, 2, 3}));
  EXPECT_EQ(b.depth.shape(), (Shape{2, 1, 2, 3}));
  EXPECT_EQ(b.targets.shape(), (Shape{2, 5}));
  EXPECT_EQ(b.targets.data()[0], 5.0);
  EXPECT_EQ(b.rgb.data()[0], s[1].rgb.data()[0]);
  EXPECT_EQ(b.depth.data()[6], s[0].depth.data()[0]);
  EXPECT_EQ(b.ids, (std::vector<std::string>{"b", "a"}));
}

TEST(BatchTest, MismatchedSizesThrow) {
  Rng rng(2);
  std::vector<Sample> s = {random_sample("a", 2, 3, rng), random_sample("b", 3, 3, rng)};
  EXPECT_THROW(make_batch(s), DimensionError);
}

}  // namespace
}  // namespace traitnet
