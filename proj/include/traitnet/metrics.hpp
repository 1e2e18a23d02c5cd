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


// Normalized MSE loss and evaluation metrics.
//
//   NMSE = sum_j [ sum_i (gt_ij - p_ij)^2 / sum_i gt_ij^2 ]
//
// over n images (rows i) and m traits (columns j). Each term is unit-free, so
// traits in different units can share one loss without output scaling.
//
// Report JSON: {"split": "test", "n": 50, "nmse": 0.07,
//               "mse": {"fresh_weight": 1.2, ...}, "config_hash": "9f..."}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "traitnet/checkpoint.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/errors.hpp"
#include "traitnet/model.hpp"
#include "traitnet/tensor.hpp"
#include "traitnet/traits.hpp"

namespace traitnet {

/// Ground truth and predictions, row-major [n, m], one name per column.
struct EvalBatch {
  std::vector<double> gt;
  std::vector<double> p;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::string> traits;

  void validate() const {
    if (m == 0 || m > kNumTraits) throw DimensionError("nmse", "traits", "m must be in 1..5, got " + std::to_string(m));
    if (n == 0) throw DimensionError("nmse", "images", "no rows");
    if (gt.size() != n * m || p.size() != n * m)
      throw DimensionError("nmse", "shape", "gt/p must both hold n*m = " + std::to_string(n * m) + " values");
    if (traits.size() != m) throw DimensionError("nmse", "traits", "need one trait name per column");
  }
};

inline EvalBatch make_eval_batch(const Tensor& gt, const Tensor& p, const std::vector<Trait>& traits) {
  if (gt.shape() != p.shape() || gt.ndim() != 2)
    throw DimensionError("nmse", "shape", "gt " + shape_str(gt.shape()) + " vs p " + shape_str(p.shape()));
  EvalBatch b;
  b.n = static_cast<std::size_t>(gt.dim(0));
  b.m = static_cast<std::size_t>(gt.dim(1));
  b.gt.assign(gt.data().begin(), gt.data().end());
  b.p.assign(p.data().begin(), p.data().end());
  for (auto t : traits) b.traits.emplace_back(trait_name(t));
  b.validate();
  return b;
}

namespace detail {

inline std::vector<double> column_energy(std::span<const double> gt, std::size_t n, std::size_t m,
                                         const std::vector<std::string>& names) {
  std::vector<double> den(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) den[j] += gt[i * m + j] * gt[i * m + j];
  for (std::size_t j = 0; j < m; ++j)
    if (!(den[j] > 0.0))
      throw DataError("nmse: ground truth for trait '" + names[j] + "' is all zero, NMSE is undefined");
  return den;
}

}  // namespace detail

/// Per-trait NMSE terms; nmse() is their sum.
inline std::vector<double> nmse_terms(const EvalBatch& b) {
  b.validate();
  const auto den = detail::column_energy(b.gt, b.n, b.m, b.traits);
  std::vector<double> num(b.m, 0.0);
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = 0; j < b.m; ++j) {
      const double e = b.gt[i * b.m + j] - b.p[i * b.m + j];
      num[j] += e * e;
    }
  for (std::size_t j = 0; j < b.m; ++j) num[j] /= den[j];
  return num;
}

inline double nmse(const EvalBatch& b) {
  double total = 0.0;
  for (double t : nmse_terms(b)) total += t;
  return total;
}

/// MSE_j = (1/n) sum_i (gt_ij - p_ij)^2.
inline std::vector<double> per_trait_mse(const EvalBatch& b) {
  b.validate();
  std::vector<double> out(b.m, 0.0);
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = 0; j < b.m; ++j) {
      const double e = b.gt[i * b.m + j] - b.p[i * b.m + j];
      out[j] += e * e;
    }
  for (auto& v : out) v /= static_cast<double>(b.n);
  return out;
}

/// Differentiable NMSE of `pred` [n, m] against constant `target` [n, m],
/// with denominators from this batch alone.
inline Tensor nmse_loss(const Tensor& pred, const Tensor& target, const std::vector<std::string>& names = {}) {
  if (pred.ndim() != 2 || pred.shape() != target.shape())
    throw DimensionError("nmse_loss", "shape", "pred " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  const auto n = static_cast<std::size_t>(pred.dim(0)), m = static_cast<std::size_t>(pred.dim(1));
  std::vector<std::string> labels = names;
  if (labels.empty())
    for (std::size_t j = 0; j < m; ++j) labels.push_back("column " + std::to_string(j));
  if (labels.size() != m) throw DimensionError("nmse_loss", "traits", "need one name per column");
  auto den = detail::column_energy(target.data(), n, m, labels);
  auto p = pred.data();
  auto gt = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double e = gt[i * m + j] - p[i * m + j];
      total += e * e / den[j];
    }
  return make_result({}, {total}, {pred}, "nmse_loss", [pred, target, den, n, m](std::span<const double> g) {
    auto sink = grad_sink(pred);
    auto p = pred.data();
    auto gt = target.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) sink[i * m + j] += g[0] * -2.0 * (gt[i * m + j] - p[i * m + j]) / den[j];
  });
}

inline Tensor nmse_loss(const Tensor& pred, const Tensor& target, const std::vector<Trait>& traits) {
  std::vector<std::string> names;
  for (auto t : traits) names.emplace_back(trait_name(t));
  return nmse_loss(pred, target, names);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Hex FNV-1a of the compact JSON text.
inline std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

struct EvaluationReport {
  std::string split;
  std::size_t n = 0;
  double nmse = 0.0;
  std::map<std::string, double> mse;  // trait -> MSE
  std::string config_hash;

  bool operator==(const EvaluationReport&) const = default;
};

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  return {{"split", r.split}, {"n", r.n}, {"nmse", r.nmse}, {"mse", r.mse}, {"config_hash", r.config_hash}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  try {
    EvaluationReport r;
    r.split = j.at("split").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.nmse = j.at("nmse").get<double>();
    r.mse = j.at("mse").get<std::map<std::string, double>>();
    r.config_hash = j.value("config_hash", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report", e.what());
  }
}

inline EvaluationReport make_report(const EvalBatch& b, std::string split_name, std::string hash = "") {
  EvaluationReport r;
  r.split = std::move(split_name);
  r.n = b.n;
  r.nmse = nmse(b);
  const auto mse = per_trait_mse(b);
  for (std::size_t j = 0; j < b.m; ++j) r.mse[b.traits[j]] = mse[j];
  r.config_hash = std::move(hash);
  return r;
}

/// Inference-mode predictions of `model` on every sample, gathered in
/// batches: {ground truth, predictions} over the model's output traits.
inline EvalBatch predict_split(Regressor& model, std::span<const Sample> samples, std::size_t batch_size = 32) {
  if (samples.empty()) throw DataError("evaluation: split is empty");
  NoGradGuard no_grad;
  model.set_training(false);
  const auto& traits = model.outputs();
  EvalBatch out;
  out.n = samples.size();
  out.m = traits.size();
  for (auto t : traits) out.traits.emplace_back(trait_name(t));
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const Tensor pred = model.forward(b);
    const Tensor gt = select_targets(b, traits);
    out.p.insert(out.p.end(), pred.data().begin(), pred.data().end());
    out.gt.insert(out.gt.end(), gt.data().begin(), gt.data().end());
  }
  out.validate();
  return out;
}

/// NMSE over the whole split in one pass (a ratio of sums, not an average of
/// per-batch ratios) plus per-trait MSE.
inline EvaluationReport evaluation_report(Regressor& model, std::span<const Sample> samples, std::string split_name,
                                          std::string hash = "", std::size_t batch_size = 32) {
  return make_report(predict_split(model, samples, batch_size), std::move(split_name), std::move(hash));
}

}  // namespace traitnet
