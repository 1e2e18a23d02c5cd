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


// Training loop, early stopping, run directories and the ablation driver.
//
// Run directory layout:
//
//   config.json      training + model configuration and its hash
//   metrics.csv      epoch,train_loss,val_nmse (deterministic)
//   train_log.jsonl  one JSON object per epoch, including wall time
//   best.ckpt        weights at the best validation epoch
//   report.json      {"test": <report>, "val": <report>, "best_epoch": k, ...}

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "traitnet/augment.hpp"
#include "traitnet/checkpoint.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/errors.hpp"
#include "traitnet/metrics.hpp"
#include "traitnet/model.hpp"
#include "traitnet/optim.hpp"
#include "traitnet/random.hpp"
#include "traitnet/sampler.hpp"

namespace traitnet {

struct TrainConfig {
  ModelConfig model;
  double lr = 5e-4;
  std::size_t batch_size = 16;
  int max_epochs = 300;
  int patience = 30;
  SamplerKind sampler = SamplerKind::kRandom;
  int bins = kDefaultFreshWeightBins;
  bool augment = true;
  AugmentOptions augment_options;
  std::optional<double> grad_clip;  // max global L2 norm; off by default
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: keep everything in memory
  std::size_t eval_batch_size = 32;

  void validate() const {
    model.validate();
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be a positive number");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("train config: max_epochs must be >= 0");
    if (patience < 1) throw ConfigError("train config: patience must be >= 1");
    if (max_epochs > 0 && patience > max_epochs)
      throw ConfigError("train config: patience (" + std::to_string(patience) + ") exceeds max_epochs (" +
                        std::to_string(max_epochs) + ")");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train config: grad_clip must be > 0");
    if (bins < 1) throw ConfigError("train config: bins must be >= 1");
    if (eval_batch_size < 1) throw ConfigError("train config: eval_batch_size must be >= 1");
  }
};

inline nlohmann::json augment_to_json(const AugmentOptions& a) {
  return {{"hflip_p", a.hflip_p},   {"vflip_p", a.vflip_p}, {"rotate_p", a.rotate_p},
          {"max_rotation_deg", a.max_rotation_deg}, {"shift_p", a.shift_p}, {"max_shift_frac", a.max_shift_frac}};
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["model"] = model_config_to_json(c.model);
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["sampler"] = sampler_name(c.sampler);
  j["bins"] = c.bins;
  j["augment"] = c.augment;
  j["augment_options"] = augment_to_json(c.augment_options);
  j["grad_clip"] = c.grad_clip ? nlohmann::json(*c.grad_clip) : nlohmann::json(nullptr);
  j["seed"] = c.seed;
  j["eval_batch_size"] = c.eval_batch_size;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    if (j.contains("sampler")) c.sampler = sampler_from_name(j.at("sampler").get<std::string>());
    c.bins = j.value("bins", c.bins);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augment_options")) {
      const auto& a = j.at("augment_options");
      c.augment_options.hflip_p = a.value("hflip_p", c.augment_options.hflip_p);
      c.augment_options.vflip_p = a.value("vflip_p", c.augment_options.vflip_p);
      c.augment_options.rotate_p = a.value("rotate_p", c.augment_options.rotate_p);
      c.augment_options.max_rotation_deg = a.value("max_rotation_deg", c.augment_options.max_rotation_deg);
      c.augment_options.shift_p = a.value("shift_p", c.augment_options.shift_p);
      c.augment_options.max_shift_frac = a.value("max_shift_frac", c.augment_options.max_shift_frac);
    }
    if (j.contains("grad_clip") && !j.at("grad_clip").is_null()) c.grad_clip = j.at("grad_clip").get<double>();
    c.seed = j.value("seed", c.seed);
    c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Source of held-out samples; the harness reads it once per run.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::vector<Sample> load() = 0;
};

class VectorSource : public SampleSource {
 public:
  explicit VectorSource(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  std::vector<Sample> load() override { return samples_; }

 private:
  std::vector<Sample> samples_;
};

/// Normalized splits ready for training.
struct PreparedData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  NormalizationStats stats;
  Split split;
  std::optional<CropWindow> crop;
};

inline nlohmann::json split_to_json(const Split& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline Split split_from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("split", e.what());
  }
}

inline nlohmann::json crop_to_json(const std::optional<CropWindow>& c) {
  if (!c) return nullptr;
  return {c->y0, c->y1, c->x0, c->x1};
}

inline std::optional<CropWindow> crop_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 4) throw ParseError("crop", "expected [y0, y1, x0, x1] or null");
  return CropWindow{j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>(), j[3].get<std::int64_t>()};
}

/// Splits, computes statistics on the train split alone, checks for leakage
/// and normalizes every split with the train statistics.
inline PreparedData prepare_data(const Manifest& manifest, std::span<const Sample> samples, const SplitSpec& spec,
                                 std::optional<CropWindow> crop_window = std::nullopt) {
  PreparedData d;
  d.split = split(manifest, spec);
  d.crop = crop_window;
  std::vector<Sample> all(samples.begin(), samples.end());
  if (crop_window)
    for (auto& s : all) s = crop(s, *crop_window);
  const auto train_raw = select(all, d.split.train);
  d.stats = compute_stats(train_raw);
  check_no_leakage(d.stats, d.split);
  d.train = normalize_all(train_raw, d.stats);
  d.val = normalize_all(select(all, d.split.val), d.stats);
  d.test = normalize_all(select(all, d.split.test), d.stats);
  return d;
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_nmse = std::numeric_limits<double>::quiet_NaN();  // NaN without a validation split
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0: the untrained initialization
  double best_val_nmse = std::numeric_limits<double>::quiet_NaN();
  bool early_stopped = false;
  std::string best_checkpoint_path;  // empty when out_dir is empty
  Checkpoint best;
  std::optional<EvaluationReport> val_report;
  EvaluationReport test_report;
  std::string config_hash;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, text);
}

}  // namespace detail

/// Fits `model` with Adam at a fixed learning rate on the batch-local NMSE,
/// keeping the weights of the epoch with the lowest validation NMSE (the
/// last epoch when there is no validation split). Training stops after
/// `patience` epochs without improvement. The best weights are restored and
/// the test split is read and evaluated exactly once.
inline RunRecord train(const TrainConfig& cfg, Regressor& model, std::span<const Sample> train_set,
                       std::span<const Sample> val_set, SampleSource& test_source,
                       const nlohmann::json& extra_metadata = nlohmann::json::object(),
                       const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: train split is empty");
  const nlohmann::json cfg_json = train_config_to_json(cfg);
  RunRecord rec;
  rec.config_hash = config_hash(cfg_json);
  const std::filesystem::path out = cfg.out_dir;
  const bool write = !cfg.out_dir.empty();
  std::ofstream csv, log;
  if (write) {
    std::filesystem::create_directories(out);
    nlohmann::json snapshot = cfg_json;
    snapshot["config_hash"] = rec.config_hash;
    detail::write_text(out / "config.json", snapshot.dump(2) + "\n");
    csv.open(out / "metrics.csv", std::ios::trunc);
    csv << "epoch,train_loss,val_nmse\n";
    log.open(out / "train_log.jsonl", std::ios::trunc);
    if (!csv || !log) throw Error("cannot write run files under " + out.string());
  }

  nlohmann::json metadata = extra_metadata;
  metadata["train"] = cfg_json;
  auto snapshot_best = [&](int epoch) {
    rec.best_epoch = epoch;
    rec.best = save_weights(model, metadata);
    rec.best.metadata["epoch"] = epoch;
  };
  snapshot_best(0);

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Adam opt(params, AdamOptions{.lr = cfg.lr});
  const Sampler sampler = Sampler::for_samples(cfg.sampler, train_set, cfg.bins);
  Rng root(cfg.seed);
  Rng sample_rng = root.fork();
  Rng augment_rng = root.fork();
  const std::vector<Trait> outputs = model.outputs();
  std::vector<std::string> names;
  for (auto t : outputs) names.emplace_back(trait_name(t));

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    model.set_training(true);
    const auto order = sampler.epoch(sample_rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A lone trailing sample rides along with the previous batch; batch
      // statistics are undefined for a single value per channel.
      if (order.size() - end == 1 && end > start + 1) end = order.size();
      std::vector<Sample> chunk;
      chunk.reserve(end - start);
      for (std::size_t k = start; k < end; ++k)
        chunk.push_back(cfg.augment ? augment(train_set[order[k]], augment_rng, cfg.augment_options)
                                    : train_set[order[k]]);
      const Batch batch = make_batch(chunk);
      const Tensor loss = nmse_loss(model.forward(batch), select_targets(batch, outputs), names);
      const double value = loss.item();
      ++batches;
      if (!std::isfinite(value)) throw DivergenceError(epoch, batches, value);
      opt.zero_grad();
      loss.backward();
      if (cfg.grad_clip) clip_grad_norm(opt.params(), *cfg.grad_clip);
      opt.step();
      if (opt.lr() != cfg.lr) throw Error("train: learning rate changed during the run");
      loss_sum += value;
      start = end;
    }
    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / batches;
    if (!val_set.empty()) er.val_nmse = nmse(predict_split(model, val_set, cfg.eval_batch_size));
    er.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epochs.push_back(er);
    if (write) {
      csv << epoch << ',' << detail::fmt_double(er.train_loss) << ',' << detail::fmt_double(er.val_nmse) << '\n';
      log << nlohmann::json{{"epoch", epoch},
                            {"train_loss", er.train_loss},
                            {"val_nmse", std::isnan(er.val_nmse) ? nlohmann::json(nullptr) : nlohmann::json(er.val_nmse)},
                            {"wall_seconds", er.wall_seconds}}
                 .dump()
          << '\n';
      csv.flush();
      log.flush();
    }
    if (on_epoch) on_epoch(er);
    const double score = val_set.empty() ? -static_cast<double>(epoch) : er.val_nmse;
    if (score < best) {
      best = score;
      stale = 0;
      snapshot_best(epoch);
    } else if (++stale >= cfg.patience) {
      rec.early_stopped = true;
      break;
    }
  }

  load_weights(model, rec.best);
  if (!val_set.empty()) {
    rec.val_report = evaluation_report(model, val_set, "val", rec.config_hash, cfg.eval_batch_size);
    rec.best_val_nmse = rec.val_report->nmse;
  }
  const std::vector<Sample> test_set = test_source.load();
  rec.test_report = evaluation_report(model, test_set, "test", rec.config_hash, cfg.eval_batch_size);
  if (write) {
    rec.best_checkpoint_path = (out / "best.ckpt").string();
    save_checkpoint(rec.best_checkpoint_path, rec.best);
    nlohmann::json report;
    report["test"] = report_to_json(rec.test_report);
    report["val"] = rec.val_report ? report_to_json(*rec.val_report) : nlohmann::json(nullptr);
    report["best_epoch"] = rec.best_epoch;
    report["epochs_run"] = rec.epochs.size();
    report["early_stopped"] = rec.early_stopped;
    detail::write_text(out / "report.json", report.dump(2) + "\n");
  }
  return rec;
}

/// Metadata that lets a checkpoint's preprocessing be replayed.
inline nlohmann::json preprocessing_metadata(const PreparedData& data) {
  return {{"normalization", stats_to_json(data.stats)},
          {"split", split_to_json(data.split)},
          {"crop", crop_to_json(data.crop)}};
}

/// Builds the model from cfg.model and trains it on prepared data; the
/// normalization statistics, split ids and crop are stored in the
/// checkpoint metadata.
inline RunRecord train(const TrainConfig& cfg, const PreparedData& data, const EpochCallback& on_epoch = {}) {
  Model model = build(cfg.model);
  VectorSource test(data.test);
  return train(cfg, model, data.train, data.val, test, preprocessing_metadata(data), on_epoch);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = {"MIMO", "MISO", "SIMO-R", "SIMO-D", "SISO-R", "SISO-D"};
  return rows;
}

/// Row of the summary table a configuration contributes to.
inline std::string ablation_row(const ModelConfig& c) {
  std::string row = c.family();
  if (c.inputs.size() == 1) row += c.inputs[0] == InputKind::kRgb ? "-R" : "-D";
  return row;
}

struct AblationCell {
  std::array<double, kNumTraits> mse{};
  double nmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> failures;  // "config: message"

  bool ok() const { return failures.empty(); }
};

struct AblationRun {
  ModelConfig config;
  std::optional<RunRecord> record;
  std::string error;
};

struct AblationResult {
  std::vector<ConvKind> kinds;
  std::vector<AblationRun> runs;
  std::map<std::pair<std::string, ConvKind>, AblationCell> cells;

  const AblationCell& cell(const std::string& row, ConvKind kind) const { return cells.at({row, kind}); }
};

/// Aggregates runs into the 6-row table. Single-output rows combine their
/// sub-models: per-trait MSE from the run predicting that trait, NMSE as the
/// sum of the single-trait NMSEs (NMSE is additive over traits).
inline void aggregate_ablation(AblationResult& result) {
  for (auto kind : result.kinds)
    for (const auto& row : ablation_rows()) {
      AblationCell cell;
      cell.mse.fill(std::numeric_limits<double>::quiet_NaN());
      double total = 0.0;
      int contributors = 0;
      for (const auto& run : result.runs) {
        if (run.config.conv_kind != kind || ablation_row(run.config) != row) continue;
        ++contributors;
        if (!run.record) {
          cell.failures.push_back(run.config.name() + ": " + run.error);
          continue;
        }
        const auto& rep = run.record->test_report;
        for (auto t : run.config.outputs) cell.mse[trait_index(t)] = rep.mse.at(std::string(trait_name(t)));
        total += rep.nmse;
      }
      if (contributors == 0) cell.failures.push_back(row + ": no runs");
      if (cell.ok()) cell.nmse = total;
      result.cells[{row, kind}] = cell;
    }
}

/// Trains every configuration of enumerate_ablation for each kind, in order,
/// under `base` (model fields other than inputs/outputs/conv kind are kept).
/// A failed run is recorded and the sweep continues.
inline AblationResult run_ablation(const std::vector<ConvKind>& kinds, const TrainConfig& base,
                                   const PreparedData& data,
                                   const std::function<void(const AblationRun&)>& on_run = {}) {
  AblationResult result;
  result.kinds = kinds;
  for (auto kind : kinds)
    for (const auto& cfg : enumerate_ablation(kind, base.model)) {
      AblationRun run;
      run.config = cfg;
      TrainConfig tc = base;
      tc.model = cfg;
      if (!base.out_dir.empty())
        tc.out_dir = (std::filesystem::path(base.out_dir) / std::string(conv_kind_name(kind)) / cfg.name()).string();
      try {
        run.record = train(tc, data);
      } catch (const Error& e) {
        run.error = e.what();
      }
      if (on_run) on_run(run);
      result.runs.push_back(std::move(run));
    }
  aggregate_ablation(result);
  return result;
}

inline std::string kind_label(ConvKind k) { return k == ConvKind::kStandard ? "CNN" : "DCNN"; }

inline std::vector<std::string> ablation_header(const AblationResult& r) {
  std::vector<std::string> h = {"architecture"};
  for (auto kind : r.kinds) {
    for (auto name : kTraitNames) h.push_back(kind_label(kind) + " " + std::string(name) + " MSE");
    h.push_back(kind_label(kind) + " NMSE");
  }
  return h;
}

inline std::vector<std::vector<std::string>> ablation_body(const AblationResult& r) {
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("FAILED");
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : ablation_rows()) {
    std::vector<std::string> line = {row};
    for (auto kind : r.kinds) {
      const auto& c = r.cell(row, kind);
      for (double v : c.mse) line.push_back(fmt(v));
      line.push_back(fmt(c.nmse));
    }
    rows.push_back(std::move(line));
  }
  return rows;
}

inline std::string ablation_csv(const AblationResult& r) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  };
  emit(ablation_header(r));
  for (const auto& line : ablation_body(r)) emit(line);
  return out;
}

inline std::string ablation_markdown(const AblationResult& r) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    out += "|";
    for (const auto& c : cells) out += " " + c + " |";
    out += '\n';
  };
  const auto header = ablation_header(r);
  emit(header);
  emit(std::vector<std::string>(header.size(), "---"));
  for (const auto& line : ablation_body(r)) emit(line);
  std::vector<std::string> failures;
  for (const auto& run : r.runs)
    if (!run.record) failures.push_back(std::string(conv_kind_name(run.config.conv_kind)) + " " + run.config.name() +
                                        ": " + run.error);
  if (!failures.empty()) {
    out += "\nFailed runs:\n\n";
    for (const auto& f : failures) out += "- " + f + "\n";
  }
  return out;
}

/// Writes ablation.csv and ablation.md under `dir`.
inline void write_ablation(const std::filesystem::path& dir, const AblationResult& r) {
  detail::write_text(dir / "ablation.csv", ablation_csv(r));
  detail::write_text(dir / "ablation.md", ablation_markdown(r));
}

}  // namespace traitnet
