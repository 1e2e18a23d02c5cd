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


// The five regression targets and their fixed column order.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "traitnet/errors.hpp"

namespace traitnet {

enum class Trait : std::size_t { kFreshWeight = 0, kDryWeight, kHeight, kDiameter, kLeafArea };

inline constexpr std::size_t kNumTraits = 5;

inline constexpr std::array<std::string_view, kNumTraits> kTraitNames = {
    "fresh_weight", "dry_weight", "height", "diameter", "leaf_area"};

/// Units: g, g, cm, cm, cm^2.
inline constexpr std::array<std::string_view, kNumTraits> kTraitUnits = {"g", "g", "cm", "cm", "cm2"};

inline constexpr std::array<Trait, kNumTraits> kAllTraits = {Trait::kFreshWeight, Trait::kDryWeight, Trait::kHeight,
                                                             Trait::kDiameter, Trait::kLeafArea};

inline std::size_t trait_index(Trait t) { return static_cast<std::size_t>(t); }
inline std::string_view trait_name(Trait t) { return kTraitNames[trait_index(t)]; }

inline Trait trait_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumTraits; ++i)
    if (kTraitNames[i] == name) return kAllTraits[i];
  throw ConfigError("unknown trait '" + std::string(name) +
                    "' (expected fresh_weight, dry_weight, height, diameter or leaf_area)");
}

struct TraitVector {
  std::array<double, kNumTraits> values{};

  double& operator[](Trait t) { return values[trait_index(t)]; }
  double operator[](Trait t) const { return values[trait_index(t)]; }

  double fresh_weight() const { return (*this)[Trait::kFreshWeight]; }
  double dry_weight() const { return (*this)[Trait::kDryWeight]; }
  double height() const { return (*this)[Trait::kHeight]; }
  double diameter() const { return (*this)[Trait::kDiameter]; }
  double leaf_area() const { return (*this)[Trait::kLeafArea]; }

  bool operator==(const TraitVector&) const = default;
};

/// Throws DataError unless every value is finite and non-negative and the
/// dry weight does not exceed the fresh weight.
inline void validate_traits(const TraitVector& t, const std::string& context) {
  for (std::size_t i = 0; i < kNumTraits; ++i) {
    if (!std::isfinite(t.values[i]) || t.values[i] < 0.0)
      throw DataError(context + ": trait " + std::string(kTraitNames[i]) + " must be finite and >= 0, got " +
                      std::to_string(t.values[i]));
  }
  if (t.dry_weight() > t.fresh_weight())
    throw DataError(context + ": dry_weight " + std::to_string(t.dry_weight()) + " exceeds fresh_weight " +
                    std::to_string(t.fresh_weight()));
}

}  // namespace traitnet
