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


// The `traitnet` command line: argument parsing and the six subcommands.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad or unknown
// flag, missing input file, invalid configuration). Every failure writes one
// JSON object on stderr:
//
//   {"error": {"kind": "usage" | "runtime", "type": "ConfigError", "message": "..."}}
//
// Progress and results go to stdout as JSON lines.

#pragma once

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "traitnet/offset_viz.hpp"
#include "traitnet/synthetic.hpp"
#include "traitnet/train.hpp"

namespace traitnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kDataEnv = "TRAITNET_DATA";

/// Bad invocation detected after argument parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

namespace fs = std::filesystem;

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct ModelFlags {
  std::string inputs = "rgb,depth";
  std::string outputs = "all";
  std::string conv = "cnn";
  std::string fusion = "mid";
  std::string encoder = "tiny";
  std::int64_t head_hidden = 256;
  std::int64_t first_offset_groups = 3;
  std::int64_t offset_groups = 8;
};

struct TrainFlags {
  std::string data;
  std::string out;
  double lr = 5e-4;
  std::size_t batch_size = 16;
  int epochs = 300;
  std::optional<int> patience;
  std::string sampler = "random";
  int bins = kDefaultFreshWeightBins;
  bool no_augment = false;
  std::optional<double> grad_clip;
  double train_fraction = 0.75;
  std::optional<std::size_t> train_count;
  std::optional<std::size_t> val_count;
  std::string crop = "auto";
  std::size_t eval_batch_size = 32;
};

inline constexpr const char* kCropHelp =
    "Crop window Y0,Y1,X0,X1 applied to every image before normalization. 'auto' uses 200,900,650,1450 "
    "(700 x 800 px of a 1080 x 1920 capture) when the images are large enough and no crop otherwise; "
    "'default' forces that window; 'none' disables cropping.";

inline void add_model_flags(CLI::App* app, ModelFlags& m, bool with_io) {
  if (with_io) {
    app->add_option("--inputs", m.inputs, "Comma list of sensor inputs: rgb, depth")->capture_default_str();
    app->add_option("--outputs", m.outputs,
                    "Comma list of traits, or 'all': fresh_weight, dry_weight, height, diameter, leaf_area")
        ->capture_default_str();
    app->add_option("--conv", m.conv, "Convolution kind: cnn (standard) or dcnn (deformable)")->capture_default_str();
    app->add_option("--fusion", m.fusion, "Fusion of two inputs: mid (separate encoders) or early (4-channel stack)")
        ->capture_default_str();
  }
  app->add_option("--encoder", m.encoder, "Encoder preset: tiny, small or resnet18")->capture_default_str();
  app->add_option("--head-hidden", m.head_hidden, "Width of the hidden regression layer")->capture_default_str();
  app->add_option("--first-offset-groups", m.first_offset_groups,
                  "Offset groups requested for each branch's first layer (clamped to a divisor of its channels)")
      ->capture_default_str();
  app->add_option("--offset-groups", m.offset_groups, "Offset groups requested for every other deformable layer")
      ->capture_default_str();
}

inline void add_train_flags(CLI::App* app, TrainFlags& t) {
  app->add_option("--data", t.data, "Dataset directory holding manifest.json")
      ->envname(kDataEnv)
      ->check(CLI::ExistingDirectory);
  app->add_option("--out", t.out, "Run output directory")->required();
  app->add_option("--lr", t.lr, "Adam learning rate, constant for the whole run")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Training batch size")->capture_default_str();
  app->add_option("--epochs", t.epochs, "Maximum number of epochs (0 evaluates the initialization)")
      ->capture_default_str();
  app->add_option("--patience", t.patience,
                  "Epochs without validation improvement before stopping [default: min(30, epochs)]");
  app->add_option("--sampler", t.sampler, "Batch sampler: random, freshweight-bins or variety-stratified")
      ->capture_default_str();
  app->add_option("--bins", t.bins, "Number of fresh-weight bins for the freshweight-bins sampler")
      ->capture_default_str();
  app->add_flag("--no-augment", t.no_augment, "Disable flips, rotation and shift augmentation");
  app->add_option("--grad-clip", t.grad_clip, "Clip the global gradient L2 norm to this value [default: off]");
  app->add_option("--train-fraction", t.train_fraction,
                  "Share of the non-test samples used for training; the rest validates")
      ->capture_default_str();
  app->add_option("--train-count", t.train_count, "Exact number of training samples (with --val-count)");
  app->add_option("--val-count", t.val_count, "Exact number of validation samples (with --train-count)");
  app->add_option("--crop", t.crop, kCropHelp)->capture_default_str();
  app->add_option("--eval-batch-size", t.eval_batch_size, "Batch size for evaluation passes")->capture_default_str();
}

inline std::vector<InputKind> parse_inputs(const std::string& s) {
  std::vector<InputKind> out;
  for (const auto& n : split_list(s)) out.push_back(input_from_name(n));
  return out;
}

inline std::vector<Trait> parse_outputs(const std::string& s) {
  if (s == "all") return {kAllTraits.begin(), kAllTraits.end()};
  std::vector<Trait> out;
  for (const auto& n : split_list(s)) out.push_back(trait_from_name(n));
  return out;
}

inline ModelConfig model_config(const ModelFlags& f, std::uint64_t seed) {
  ModelConfig c;
  c.inputs = parse_inputs(f.inputs);
  c.outputs = parse_outputs(f.outputs);
  c.conv_kind = conv_kind_from_name(f.conv);
  c.fusion = fusion_from_name(f.fusion);
  c.encoder = f.encoder;
  c.head_hidden = f.head_hidden;
  c.first_offset_groups = f.first_offset_groups;
  c.offset_groups = f.offset_groups;
  c.seed = seed;
  return c;
}

inline TrainConfig train_config(const TrainFlags& f, const ModelConfig& model, std::uint64_t seed) {
  TrainConfig c;
  c.model = model;
  c.lr = f.lr;
  c.batch_size = f.batch_size;
  c.max_epochs = f.epochs;
  c.patience = f.patience ? *f.patience : std::max(1, std::min(30, f.epochs));
  c.sampler = sampler_from_name(f.sampler);
  c.bins = f.bins;
  c.augment = !f.no_augment;
  c.grad_clip = f.grad_clip;
  c.seed = seed;
  c.out_dir = f.out;
  c.eval_batch_size = f.eval_batch_size;
  c.validate();
  return c;
}

inline fs::path data_dir(const std::string& flag) {
  if (flag.empty())
    throw UsageError(std::string("no dataset directory: pass --data or set ") + kDataEnv);
  const fs::path manifest = fs::path(flag) / "manifest.json";
  if (!fs::exists(manifest)) throw UsageError("dataset directory has no manifest.json: " + flag);
  return flag;
}

inline std::optional<CropWindow> parse_crop(const std::string& s, std::int64_t h, std::int64_t w) {
  if (s == "none") return std::nullopt;
  if (s == "auto") return kDefaultCrop.fits(h, w) ? std::optional(kDefaultCrop) : std::nullopt;
  CropWindow win = kDefaultCrop;
  if (s != "default") {
    const auto parts = split_list(s);
    if (parts.size() != 4) throw UsageError("--crop expects Y0,Y1,X0,X1, auto, default or none, got '" + s + "'");
    try {
      win = {std::stoll(parts[0]), std::stoll(parts[1]), std::stoll(parts[2]), std::stoll(parts[3])};
    } catch (const std::exception&) {
      throw UsageError("--crop values must be integers, got '" + s + "'");
    }
  }
  if (!win.fits(h, w))
    throw UsageError("crop window " + s + " does not fit " + std::to_string(h) + "x" + std::to_string(w) + " images");
  return win;
}

struct Dataset {
  Manifest manifest;
  std::vector<Sample> samples;
};

inline Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = load_manifest(dir / "manifest.json");
  d.samples = load_samples(d.manifest);
  return d;
}

inline PreparedData prepare(const Dataset& ds, const TrainFlags& f, std::uint64_t seed) {
  SplitSpec spec;
  spec.test_ids = ds.manifest.test_ids;
  spec.train_fraction = f.train_fraction;
  spec.train_count = f.train_count;
  spec.val_count = f.val_count;
  spec.seed = seed;
  const auto& first = ds.samples.front().rgb;
  return prepare_data(ds.manifest, ds.samples, spec, parse_crop(f.crop, first.dim(1), first.dim(2)));
}

inline void emit(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n' << std::flush; }

inline nlohmann::json epoch_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"val_nmse", std::isnan(e.val_nmse) ? nlohmann::json(nullptr) : nlohmann::json(e.val_nmse)}};
}

inline void require_empty_or_absent(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError("output path exists and is not a directory: " + dir.string());
  if (!force && fs::exists(dir) && !fs::is_empty(dir))
    throw UsageError("output directory is not empty (pass --force to overwrite): " + dir.string());
}

/// Samples of one split of a trained run, preprocessed as at training time.
inline std::vector<Sample> replay_split(const Checkpoint& ckpt, const Dataset& ds, const std::string& split_name) {
  const auto& meta = ckpt.metadata;
  if (!meta.contains("normalization") || !meta.contains("split"))
    throw ParseError("checkpoint", "metadata lacks the normalization statistics or split of its training run");
  const NormalizationStats stats = stats_from_json(meta.at("normalization"));
  const Split split = split_from_json(meta.at("split"));
  const auto crop_window = crop_from_json(meta.value("crop", nlohmann::json(nullptr)));
  const std::vector<std::string>* ids = split_name == "train" ? &split.train
                                        : split_name == "val" ? &split.val
                                        : split_name == "test" ? &split.test
                                                               : nullptr;
  if (ids == nullptr) throw UsageError("--split must be train, val or test, got '" + split_name + "'");
  auto samples = select(ds.samples, *ids);
  for (auto& s : samples) {
    if (crop_window) s = crop(s, *crop_window);
    s = normalize(s, stats);
  }
  return samples;
}

}  // namespace detail

/// Runs the tool with `args` (without the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace detail;
  CLI::App app{"Plant trait regression from RGB-D images with standard or deformable convolutions.", "traitnet"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "TOML file with option values; global keys at the top, subcommand keys under [subcommand] "
                 "tables, using the long flag names (e.g. batch-size = 8). Command-line flags take precedence.");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for data generation, splitting, initialization, sampling and augmentation")
      ->capture_default_str();

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Render a seeded synthetic RGB-D plant dataset");
  SyntheticOptions gen_opt;
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--count", gen_opt.count, "Number of samples")->capture_default_str();
  gen->add_option("--size", gen_opt.size, "Image side in pixels")->capture_default_str();
  gen->add_option("--test-count", gen_opt.test_count, "Held-out test samples; -1 means min(50, count / 8)")
      ->capture_default_str();
  gen->add_flag("--force", gen_force, "Write into a non-empty directory");

  // train
  auto* tr = app.add_subcommand("train", "Train one model and evaluate it on the held-out split");
  ModelFlags tr_model;
  TrainFlags tr_flags;
  add_model_flags(tr, tr_model, true);
  add_train_flags(tr, tr_flags);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split of its training dataset");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  std::size_t ev_batch = 32;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory holding manifest.json")
      ->envname(kDataEnv)
      ->check(CLI::ExistingDirectory);
  ev->add_option("--split", ev_split, "Split to evaluate: train, val or test")->capture_default_str();
  ev->add_option("--out", ev_out, "Write the report JSON here instead of stdout");
  ev->add_option("--batch-size", ev_batch, "Evaluation batch size")->capture_default_str();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train all 18 input/output configurations per conv kind and tabulate");
  ModelFlags ab_model;
  TrainFlags ab_flags;
  std::string ab_conv = "both";
  add_model_flags(ab, ab_model, false);
  add_train_flags(ab, ab_flags);
  ab->add_option("--conv", ab_conv, "Conv kinds to sweep: cnn, dcnn or both")->capture_default_str();

  // viz-offsets
  auto* vz = app.add_subcommand("viz-offsets", "Plot strong offsets of the first deformable layer over an image");
  std::string vz_ckpt, vz_image, vz_depth, vz_out, vz_points;
  double vz_threshold = kDefaultStrongOffsetPx;
  int vz_max = kDefaultMaxKernelPoints;
  vz->add_option("--checkpoint", vz_ckpt, "Deformable checkpoint written by train")->required()->check(CLI::ExistingFile);
  vz->add_option("--image", vz_image, "RGB image (PNG or PPM)")->required()->check(CLI::ExistingFile);
  vz->add_option("--depth", vz_depth, "Depth image; needed when the first layer reads depth")->check(CLI::ExistingFile);
  vz->add_option("--threshold", vz_threshold, "Strong-offset magnitude in px; offsets >= threshold are drawn")
      ->capture_default_str();
  vz->add_option("--kernel-points", vz_points,
                 "Comma list of kernel point indices ki*kW+kj [default: the four kernel corners]");
  vz->add_option("--max-kernel-points", vz_max, "Most kernel points drawn in one image")->capture_default_str();
  vz->add_option("--out", vz_out, "Overlay image (.png, otherwise binary PPM); a .json sidecar lists the points")
      ->required();

  // convert-checkpoint
  auto* cv = app.add_subcommand("convert-checkpoint", "Copy a checkpoint's weights into the other conv kind");
  std::string cv_in, cv_out, cv_to = "dcnn";
  cv->add_option("--in", cv_in, "Source checkpoint")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", cv_out, "Destination checkpoint")->required();
  cv->add_option("--to", cv_to, "Target conv kind: dcnn (offset convs start at zero) or cnn")->capture_default_str();

  auto fail = [&](const char* kind, const std::string& type, const std::string& message) {
    err << nlohmann::json{{"error", {{"kind", kind}, {"type", type}, {"message", message}}}}.dump() << '\n';
    return std::string(kind) == "usage" ? kExitUsage : kExitRuntime;
  };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail("usage", "ArgumentError", e.what());
  }

  try {
    if (gen->parsed()) {
      require_empty_or_absent(gen_out, gen_force);
      Rng rng(seed);
      auto ds = generate_synthetic(gen_opt, rng);
      write_dataset(gen_out, ds);
      emit(out, {{"dataset", gen_out}, {"samples", ds.samples.size()}, {"test", ds.manifest.test_ids.size()}});
    } else if (tr->parsed()) {
      const TrainConfig cfg = train_config(tr_flags, model_config(tr_model, seed), seed);
      const auto ds = load_dataset(data_dir(tr_flags.data));
      const auto data = prepare(ds, tr_flags, seed);
      const auto rec = train(cfg, data, [&](const EpochRecord& e) { emit(out, epoch_json(e)); });
      emit(out, {{"best_epoch", rec.best_epoch},
                 {"best_val_nmse", std::isnan(rec.best_val_nmse) ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(rec.best_val_nmse)},
                 {"test_nmse", rec.test_report.nmse},
                 {"checkpoint", rec.best_checkpoint_path}});
    } else if (ev->parsed()) {
      const auto ds = load_dataset(data_dir(ev_data));
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const auto samples = replay_split(ckpt, ds, ev_split);
      Model model = model_from_checkpoint(ckpt);
      const std::string hash = config_hash(ckpt.metadata.value("train", nlohmann::json::object()));
      const auto report = evaluation_report(model, samples, ev_split, hash, ev_batch);
      const std::string text = report_to_json(report).dump(2) + "\n";
      if (ev_out.empty()) {
        out << text;
      } else {
        ::traitnet::detail::write_file_bytes(ev_out, text);
        emit(out, {{"report", ev_out}, {"nmse", report.nmse}});
      }
    } else if (ab->parsed()) {
      std::vector<ConvKind> kinds;
      if (ab_conv == "both")
        kinds = {ConvKind::kStandard, ConvKind::kDeformable};
      else
        kinds = {conv_kind_from_name(ab_conv)};
      const TrainConfig base = train_config(ab_flags, model_config(ab_model, seed), seed);
      const auto ds = load_dataset(data_dir(ab_flags.data));
      const auto data = prepare(ds, ab_flags, seed);
      const auto result = run_ablation(kinds, base, data, [&](const AblationRun& r) {
        nlohmann::json j = {{"run", r.config.name()}, {"conv", conv_kind_name(r.config.conv_kind)}};
        if (r.record) {
          j["test_nmse"] = r.record->test_report.nmse;
        } else {
          j["error"] = r.error;
          err << nlohmann::json{{"warning", {{"run", r.config.name()}, {"message", r.error}}}}.dump() << '\n';
        }
        emit(out, j);
      });
      write_ablation(ab_flags.out, result);
      emit(out, {{"table", (fs::path(ab_flags.out) / "ablation.csv").string()},
                 {"runs", result.runs.size()}});
    } else if (vz->parsed()) {
      const Checkpoint ckpt = load_checkpoint(vz_ckpt);
      const Model model = model_from_checkpoint(ckpt);
      if (!model.first_conv().deformable())
        throw UsageError("viz-offsets needs a deformable checkpoint (see convert-checkpoint)");
      const ModelConfig& mc = model.config();
      const bool needs_depth = mc.fusion == Fusion::kEarly || mc.inputs[0] == InputKind::kDepth;
      if (needs_depth && vz_depth.empty()) throw UsageError("this model's first layer reads depth: pass --depth");
      Sample s;
      s.id = fs::path(vz_image).stem().string();
      s.rgb = raster_to_tensor(read_raster(vz_image));
      if (s.rgb.dim(0) != 3) throw UsageError("--image must be a 3-channel RGB image");
      s.depth = vz_depth.empty() ? Tensor::zeros({1, s.rgb.dim(1), s.rgb.dim(2)})
                                 : raster_to_tensor(read_raster(vz_depth));
      if (s.depth.shape() != Shape{1, s.rgb.dim(1), s.rgb.dim(2)})
        throw UsageError("--depth must be a single-channel image the size of --image");
      if (const auto win = crop_from_json(ckpt.metadata.value("crop", nlohmann::json(nullptr)))) {
        if (!win->fits(s.rgb.dim(1), s.rgb.dim(2))) throw UsageError("image is smaller than the run's crop window");
        s = crop(s, *win);
      }
      if (!ckpt.metadata.contains("normalization"))
        throw ParseError(vz_ckpt, "metadata lacks normalization statistics");
      const Raster base = tensor_to_raster(mc.inputs[0] == InputKind::kDepth && mc.fusion == Fusion::kMid
                                               ? s.depth
                                               : s.rgb,
                                           mc.inputs[0] == InputKind::kDepth && mc.fusion == Fusion::kMid ? 16 : 8);
      const OffsetField field = extract_offsets(model, normalize(s, stats_from_json(ckpt.metadata.at("normalization"))));
      std::vector<std::int64_t> points;
      if (vz_points.empty()) {
        points = default_kernel_points(field.kernel_h, field.kernel_w);
      } else {
        for (const auto& p : split_list(vz_points)) {
          try {
            points.push_back(std::stoll(p));
          } catch (const std::exception&) {
            throw UsageError("--kernel-points must be integers, got '" + p + "'");
          }
        }
      }
      OverlayOptions opt;
      opt.max_kernel_points = vz_max;
      const StrongOffsetSet strong = filter_strong(field, vz_threshold);
      const auto pts = overlay_points(field, strong, points, opt);
      const Raster img = render_overlay(base, pts, static_cast<int>(points.size()), opt);
      if (fs::path(vz_out).has_parent_path()) fs::create_directories(fs::path(vz_out).parent_path());
      write_raster(vz_out, img);
      nlohmann::json side = {{"threshold", vz_threshold},
                             {"kernel_points", points},
                             {"strong_offsets", strong.size()},
                             {"points", nlohmann::json::array()}};
      for (std::size_t i = 0; i < points.size(); ++i)
        side["legend"].push_back({{"kernel_point", points[i]}, {"rgb", kOverlayPalette[i]}});
      for (const auto& p : pts)
        side["points"].push_back({{"kernel_point", p.kernel_point},
                                  {"base", {p.base_y, p.base_x}},
                                  {"location", {p.y, p.x}},
                                  {"clamped", p.clamped}});
      ::traitnet::detail::write_file_bytes(vz_out + ".json", side.dump(2) + "\n");
      emit(out, {{"overlay", vz_out}, {"strong_offsets", strong.size()}, {"plotted", pts.size()}});
    } else if (cv->parsed()) {
      const ConvKind to = conv_kind_from_name(cv_to);
      const Checkpoint src = load_checkpoint(cv_in);
      const Model model = model_from_checkpoint(src, to);
      nlohmann::json meta = src.metadata;
      meta.erase("model");
      save_checkpoint(cv_out, save_weights(model, meta));
      emit(out, {{"checkpoint", cv_out}, {"conv", conv_kind_name(to)}, {"parameters", model.parameter_count()}});
    }
  } catch (const UsageError& e) {
    return fail("usage", "UsageError", e.what());
  } catch (const ConfigError& e) {
    return fail("usage", "ConfigError", e.what());
  } catch (const DimensionError& e) {
    return fail("runtime", "DimensionError", e.what());
  } catch (const ParseError& e) {
    return fail("runtime", "ParseError", e.what());
  } catch (const DataError& e) {
    return fail("runtime", "DataError", e.what());
  } catch (const DivergenceError& e) {
    return fail("runtime", "DivergenceError", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", "Error", e.what());
  }
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace traitnet::cli
