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


// Index streams over the train split: plain random permutations, fresh-weight
// bin balancing, and variety stratification.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "traitnet/dataset.hpp"
#include "traitnet/errors.hpp"
#include "traitnet/random.hpp"

namespace traitnet {

enum class SamplerKind { kRandom, kFreshWeightBins, kVarietyStratified };

inline std::string_view sampler_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::kRandom: return "random";
    case SamplerKind::kFreshWeightBins: return "freshweight-bins";
    case SamplerKind::kVarietyStratified: return "variety-stratified";
  }
  return "?";
}

inline SamplerKind sampler_from_name(std::string_view name) {
  if (name == "random") return SamplerKind::kRandom;
  if (name == "freshweight-bins") return SamplerKind::kFreshWeightBins;
  if (name == "variety-stratified") return SamplerKind::kVarietyStratified;
  throw ConfigError("unknown sampler '" + std::string(name) +
                    "' (expected random, freshweight-bins or variety-stratified)");
}

inline constexpr int kDefaultFreshWeightBins = 10;

/// Epoch index generator. Weighted strategies draw with replacement and
/// group the items into strata; a draw picks a non-empty stratum uniformly,
/// then a member uniformly, so P(i) = 1 / (#strata * |stratum(i)|).
class Sampler {
 public:
  Sampler(SamplerKind kind, std::span<const double> fresh_weights, std::span<const std::string> varieties,
          int bins = kDefaultFreshWeightBins)
      : kind_(kind), n_(fresh_weights.size()) {
    if (n_ == 0) throw DataError("sampler: no samples to draw from");
    if (varieties.size() != n_) throw DimensionError("sampler", "items", "fresh weights and varieties differ in length");
    if (kind_ == SamplerKind::kFreshWeightBins) {
      if (bins < 1) throw ConfigError("sampler: bin count must be >= 1");
      const auto [lo, hi] = std::minmax_element(fresh_weights.begin(), fresh_weights.end());
      strata_.assign(static_cast<std::size_t>(bins), {});
      for (std::size_t i = 0; i < n_; ++i) strata_[bin_of(fresh_weights[i], *lo, *hi, bins)].push_back(i);
    } else if (kind_ == SamplerKind::kVarietyStratified) {
      std::map<std::string, std::vector<std::size_t>> by_variety;
      for (std::size_t i = 0; i < n_; ++i) by_variety[varieties[i]].push_back(i);
      for (auto& [name, members] : by_variety) strata_.push_back(std::move(members));
    }
    std::erase_if(strata_, [](const auto& s) { return s.empty(); });
  }

  /// Builds from samples, reading fresh weight and variety.
  static Sampler for_samples(SamplerKind kind, std::span<const Sample> samples, int bins = kDefaultFreshWeightBins) {
    std::vector<double> fw;
    std::vector<std::string> var;
    for (const auto& s : samples) {
      fw.push_back(s.traits.fresh_weight());
      var.push_back(s.variety);
    }
    return Sampler(kind, fw, var, bins);
  }

  /// Bin of `value` among `bins` equal-width bins over [lo, hi]; the top
  /// edge belongs to the last bin.
  static std::size_t bin_of(double value, double lo, double hi, int bins) {
    if (!(hi > lo)) return 0;
    const auto b = static_cast<std::int64_t>(std::floor((value - lo) / (hi - lo) * bins));
    return static_cast<std::size_t>(std::clamp<std::int64_t>(b, 0, bins - 1));
  }

  /// One epoch of `size()` indices.
  std::vector<std::size_t> epoch(Rng& rng) const {
    std::vector<std::size_t> out;
    out.reserve(n_);
    if (kind_ == SamplerKind::kRandom) {
      for (std::size_t i = 0; i < n_; ++i) out.push_back(i);
      rng.shuffle(out);
      return out;
    }
    for (std::size_t k = 0; k < n_; ++k) out.push_back(draw(rng));
    return out;
  }

  /// Single draw from the weighted strategies (uniform for kRandom).
  std::size_t draw(Rng& rng) const {
    if (kind_ == SamplerKind::kRandom) return static_cast<std::size_t>(rng.below(n_));
    const auto& stratum = strata_[rng.below(strata_.size())];
    return stratum[rng.below(stratum.size())];
  }

  /// Exact selection probability of every index.
  std::vector<double> probabilities() const {
    std::vector<double> p(n_, 1.0 / static_cast<double>(n_));
    if (kind_ == SamplerKind::kRandom) return p;
    for (const auto& s : strata_)
      for (auto i : s) p[i] = 1.0 / (static_cast<double>(strata_.size()) * static_cast<double>(s.size()));
    return p;
  }

  SamplerKind kind() const { return kind_; }
  std::size_t size() const { return n_; }
  const std::vector<std::vector<std::size_t>>& strata() const { return strata_; }

 private:
  SamplerKind kind_;
  std::size_t n_;
  std::vector<std::vector<std::size_t>> strata_;
};

}  // namespace traitnet
