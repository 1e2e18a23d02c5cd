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
#include <map>
#include <numeric>

#include "traitnet/sampler.hpp"

namespace traitnet {
namespace {

constexpr int kDraws = 100000;

std::vector<std::string> labels(std::size_t n, const std::string& v = "a") { return std::vector<std::string>(n, v); }

TEST(SamplerTest, SingleImageAlwaysDrawn) {
  const std::vector<double> fw = {3.0};
  for (auto kind : {SamplerKind::kRandom, SamplerKind::kFreshWeightBins, SamplerKind::kVarietyStratified}) {
    const Sampler s(kind, fw, labels(1));
    Rng rng(1);
    for (int e = 0; e < 3; ++e) EXPECT_EQ(s.epoch(rng), std::vector<std::size_t>{0}) << sampler_name(kind);
  }
}

TEST(SamplerTest, RandomEpochIsPermutation) {
  std::vector<double> fw(37);
  std::iota(fw.begin(), fw.end(), 0.0);
  const Sampler s(SamplerKind::kRandom, fw, labels(37));
  Rng rng(2);
  const auto e1 = s.epoch(rng), e2 = s.epoch(rng);
  for (const auto& e : {e1, e2}) {
    auto sorted = e;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  }
  EXPECT_NE(e1, e2);
}

TEST(SamplerTest, BinsOfOneAndNineDrawEqually) {
  // Two bins over [0, 10]: one image at 0, nine at 10.
  std::vector<double> fw = {0.0};
  for (int i = 0; i < 9; ++i) fw.push_back(10.0);
  const Sampler s(SamplerKind::kFreshWeightBins, fw, labels(10), 2);
  ASSERT_EQ(s.strata().size(), 2u);
  Rng rng(3);
  int singleton = 0;
  for (int i = 0; i < kDraws; ++i) singleton += s.draw(rng) == 0;
  EXPECT_NEAR(static_cast<double>(singleton) / kDraws, 0.5, 0.01);
}

TEST(SamplerTest, BinProbabilitiesInverseToBinSize) {
  // Default 10 bins over [0, 100]; sizes 1, 2, 3, 4 in bins 0, 3, 6, 9.
  std::vector<double> fw = {0, 31, 35, 61, 62, 63, 95, 96, 97, 100};
  const Sampler s(SamplerKind::kFreshWeightBins, fw, labels(fw.size()));
  const auto p = s.probabilities();
  const std::vector<double> expected = {1.0 / 4, 1.0 / 8, 1.0 / 8, 1.0 / 12, 1.0 / 12, 1.0 / 12,
                                        1.0 / 16, 1.0 / 16, 1.0 / 16, 1.0 / 16};
  for (std::size_t i = 0; i < fw.size(); ++i) EXPECT_DOUBLE_EQ(p[i], expected[i]) << i;
  Rng rng(4);
  std::vector<int> counts(fw.size());
  for (int i = 0; i < kDraws; ++i) ++counts[s.draw(rng)];
  for (std::size_t i = 0; i < fw.size(); ++i) EXPECT_NEAR(counts[i] / double(kDraws), expected[i], 0.01) << i;
}

TEST(SamplerTest, BinEdges) {
  EXPECT_EQ(Sampler::bin_of(0.0, 0.0, 10.0, 10), 0u);
  EXPECT_EQ(Sampler::bin_of(0.999, 0.0, 10.0, 10), 0u);
  EXPECT_EQ(Sampler::bin_of(1.0, 0.0, 10.0, 10), 1u);
  EXPECT_EQ(Sampler::bin_of(10.0, 0.0, 10.0, 10), 9u);
  EXPECT_EQ(Sampler::bin_of(5.0, 5.0, 5.0, 10), 0u);
}

TEST(SamplerTest, VarietyStratifiedEqualizesVarieties) {
  std::vector<std::string> var = {"x", "y", "y", "y", "z", "z", "z", "z", "z", "z"};
  const Sampler s(SamplerKind::kVarietyStratified, std::vector<double>(var.size(), 1.0), var);
  Rng rng(5);
  std::map<std::string, int> counts;
  for (int i = 0; i < kDraws; ++i) ++counts[var[s.draw(rng)]];
  for (const auto& [name, c] : counts) EXPECT_NEAR(c / double(kDraws), 1.0 / 3, 0.01) << name;
  // Epochs are the same length as the split.
  EXPECT_EQ(s.epoch(rng).size(), var.size());
}

TEST(SamplerTest, EmptyInputThrows) {
  EXPECT_THROW(Sampler(SamplerKind::kRandom, std::vector<double>{}, std::vector<std::string>{}), DataError);
  EXPECT_THROW(sampler_from_name("stratified"), ConfigError);
}

TEST(SamplerTest, ProbabilitiesSumToOne) {
  std::vector<double> fw = {1, 2, 2, 9, 4, 4, 4, 7};
  std::vector<std::string> var = {"a", "b", "a", "c", "c", "a", "b", "a"};
  for (auto kind : {SamplerKind::kRandom, SamplerKind::kFreshWeightBins, SamplerKind::kVarietyStratified}) {
    const auto p = Sampler(kind, fw, var).probabilities();
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

}  // namespace
}  // namespace traitnet
