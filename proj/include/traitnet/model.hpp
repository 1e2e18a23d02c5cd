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


// Architecture factory: residual encoders, the depth colour-mapping adapter,
// early/mid fusion and the regression head, with standard or deformable
// convolutions.
//
// ModelConfig JSON schema:
//
//   {"inputs": ["rgb", "depth"], "outputs": ["fresh_weight", ...],
//    "conv_kind": "standard" | "deformable", "fusion": "mid" | "early",
//    "encoder": "tiny" | "small" | "resnet18", "head_hidden": 256, "seed": 0,
//    "first_offset_groups": 3, "offset_groups": 8}
//
// Parameter names follow the module tree, e.g. "rgb.stem.conv.weight",
// "depth.adapter.weight", "rgb.layer2.0.downsample.conv.weight",
// "head.fc1.bias"; a deformable layer adds "<layer>.offset.weight|bias".

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "traitnet/checkpoint.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/deform_conv.hpp"
#include "traitnet/errors.hpp"
#include "traitnet/nn.hpp"
#include "traitnet/ops.hpp"
#include "traitnet/random.hpp"
#include "traitnet/traits.hpp"

namespace traitnet {

enum class InputKind { kRgb, kDepth };
enum class ConvKind { kStandard, kDeformable };
enum class Fusion { kMid, kEarly };

inline std::string_view input_name(InputKind k) { return k == InputKind::kRgb ? "rgb" : "depth"; }
inline std::string_view conv_kind_name(ConvKind k) { return k == ConvKind::kStandard ? "standard" : "deformable"; }
inline std::string_view fusion_name(Fusion f) { return f == Fusion::kMid ? "mid" : "early"; }

inline InputKind input_from_name(std::string_view s) {
  if (s == "rgb") return InputKind::kRgb;
  if (s == "depth") return InputKind::kDepth;
  throw ConfigError("unknown input '" + std::string(s) + "' (expected rgb or depth)");
}

inline ConvKind conv_kind_from_name(std::string_view s) {
  if (s == "standard" || s == "cnn") return ConvKind::kStandard;
  if (s == "deformable" || s == "dcnn") return ConvKind::kDeformable;
  throw ConfigError("unknown conv kind '" + std::string(s) + "' (expected standard or deformable)");
}

inline Fusion fusion_from_name(std::string_view s) {
  if (s == "mid") return Fusion::kMid;
  if (s == "early") return Fusion::kEarly;
  throw ConfigError("unknown fusion '" + std::string(s) + "' (expected mid or early)");
}

/// ResNet18 layout (4 stages x 2 basic blocks) at a given width.
struct EncoderPreset {
  std::string name;
  std::array<std::int64_t, 4> widths;
  std::int64_t stem_kernel;
  std::int64_t stem_padding;
};

inline EncoderPreset encoder_preset(std::string_view name) {
  if (name == "tiny") return {"tiny", {8, 16, 32, 64}, 3, 1};
  if (name == "small") return {"small", {16, 32, 64, 128}, 3, 1};
  if (name == "resnet18") return {"resnet18", {64, 128, 256, 512}, 7, 3};
  throw ConfigError("unknown encoder preset '" + std::string(name) + "' (expected tiny, small or resnet18)");
}

struct ModelConfig {
  std::vector<InputKind> inputs = {InputKind::kRgb, InputKind::kDepth};
  std::vector<Trait> outputs = {kAllTraits.begin(), kAllTraits.end()};
  ConvKind conv_kind = ConvKind::kStandard;
  Fusion fusion = Fusion::kMid;
  std::string encoder = "tiny";
  std::int64_t head_hidden = 256;
  std::uint64_t seed = 0;
  // Requested offset groups for each branch's first layers (adapter, stem)
  // and for every other conv; clamped to the largest divisor of the layer's
  // input channels.
  std::int64_t first_offset_groups = 3;
  std::int64_t offset_groups = 8;

  bool has(InputKind k) const { return std::find(inputs.begin(), inputs.end(), k) != inputs.end(); }

  /// SISO, MISO, SIMO or MIMO.
  std::string family() const {
    return std::string(inputs.size() > 1 ? "MI" : "SI") + (outputs.size() > 1 ? "MO" : "SO");
  }

  /// Readable unique name, e.g. "MISO-height" or "SIMO-R".
  std::string name() const {
    std::string n = family();
    if (inputs.size() == 1) n += inputs[0] == InputKind::kRgb ? "-R" : "-D";
    if (outputs.size() == 1) n += "-" + std::string(trait_name(outputs[0]));
    if (fusion == Fusion::kEarly) n += "-early";
    return n;
  }

  void validate() const {
    if (inputs.empty()) throw ConfigError("model config: inputs must be non-empty");
    if (outputs.empty()) throw ConfigError("model config: outputs must be non-empty");
    if (std::set<InputKind>(inputs.begin(), inputs.end()).size() != inputs.size())
      throw ConfigError("model config: duplicate input");
    if (std::set<Trait>(outputs.begin(), outputs.end()).size() != outputs.size())
      throw ConfigError("model config: duplicate output trait");
    if (fusion == Fusion::kEarly && inputs.size() != 2)
      throw ConfigError("model config: early fusion needs both rgb and depth inputs");
    if (head_hidden < 1) throw ConfigError("model config: head_hidden must be >= 1");
    if (first_offset_groups < 1 || offset_groups < 1) throw ConfigError("model config: offset groups must be >= 1");
    encoder_preset(encoder);
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  std::vector<std::string> in, out;
  for (auto k : c.inputs) in.emplace_back(input_name(k));
  for (auto t : c.outputs) out.emplace_back(trait_name(t));
  j["inputs"] = in;
  j["outputs"] = out;
  j["conv_kind"] = conv_kind_name(c.conv_kind);
  j["fusion"] = fusion_name(c.fusion);
  j["encoder"] = c.encoder;
  j["head_hidden"] = c.head_hidden;
  j["seed"] = c.seed;
  j["first_offset_groups"] = c.first_offset_groups;
  j["offset_groups"] = c.offset_groups;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"inputs", "outputs", "conv_kind", "fusion", "encoder",
                                              "head_hidden", "seed", "first_offset_groups", "offset_groups"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("model config: unknown key '" + key + "'");
  ModelConfig c;
  try {
    if (j.contains("inputs")) {
      c.inputs.clear();
      for (const auto& s : j.at("inputs")) c.inputs.push_back(input_from_name(s.get<std::string>()));
    }
    if (j.contains("outputs")) {
      c.outputs.clear();
      for (const auto& s : j.at("outputs")) c.outputs.push_back(trait_from_name(s.get<std::string>()));
    }
    if (j.contains("conv_kind")) c.conv_kind = conv_kind_from_name(j.at("conv_kind").get<std::string>());
    if (j.contains("fusion")) c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
    c.encoder = j.value("encoder", c.encoder);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.seed = j.value("seed", c.seed);
    c.first_offset_groups = j.value("first_offset_groups", c.first_offset_groups);
    c.offset_groups = j.value("offset_groups", c.offset_groups);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Largest divisor of `channels` not exceeding `requested`.
inline std::int64_t clamp_offset_groups(std::int64_t channels, std::int64_t requested) {
  for (std::int64_t g = std::min(channels, requested); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

/// A convolution that is either standard or deformable.
class ConvLayer {
 public:
  ConvLayer() = default;
  explicit ConvLayer(Conv2d conv) : conv_(std::move(conv)) {}

  void make_deformable(std::int64_t requested_groups) {
    if (deform_) return;
    deform_ = convert_standard_to_deformable(conv_, clamp_offset_groups(conv_.in_channels(), requested_groups));
    conv_ = Conv2d();
  }

  Tensor forward(const Tensor& x) const { return deform_ ? deform_->forward(x) : conv_.forward(x); }

  bool deformable() const { return deform_.has_value(); }
  const DeformConv2d& deform() const { return *deform_; }
  const Conv2d& standard() const { return conv_; }

  void collect(const std::string& prefix, TensorList& params) const {
    if (deform_) {
      deform_->collect(prefix, params);
    } else {
      conv_.collect(prefix, params);
    }
  }

 private:
  Conv2d conv_;
  std::optional<DeformConv2d> deform_;
};

/// conv3x3-bn-relu-conv3x3-bn + shortcut, then relu.
class BasicBlock {
 public:
  BasicBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng)
      : conv1_(Conv2d(in, out, 3, stride, 1, false, rng)), bn1_(out), conv2_(Conv2d(out, out, 3, 1, 1, false, rng)), bn2_(out) {
    if (stride != 1 || in != out) {
      down_conv_ = ConvLayer(Conv2d(in, out, 1, stride, 0, false, rng));
      down_bn_ = BatchNorm2d(out);
      has_down_ = true;
    }
  }

  Tensor forward(const Tensor& x, bool training) {
    Tensor h = relu(bn1_.forward(conv1_.forward(x), training));
    h = bn2_.forward(conv2_.forward(h), training);
    const Tensor shortcut = has_down_ ? down_bn_.forward(down_conv_.forward(x), training) : x;
    return relu(add(h, shortcut));
  }

  void make_deformable(std::int64_t groups) {
    conv1_.make_deformable(groups);
    conv2_.make_deformable(groups);
    if (has_down_) down_conv_.make_deformable(groups);
  }

  void collect(const std::string& p, TensorList& params, TensorList& buffers) const {
    conv1_.collect(p + "conv1.", params);
    bn1_.collect(p + "bn1.", params, buffers);
    conv2_.collect(p + "conv2.", params);
    bn2_.collect(p + "bn2.", params, buffers);
    if (has_down_) {
      down_conv_.collect(p + "downsample.conv.", params);
      down_bn_.collect(p + "downsample.bn.", params, buffers);
    }
  }

 private:
  ConvLayer conv1_;
  BatchNorm2d bn1_;
  ConvLayer conv2_;
  BatchNorm2d bn2_;
  bool has_down_ = false;
  ConvLayer down_conv_;
  BatchNorm2d down_bn_;
};

/// Stem (conv-bn-relu-maxpool), four stages of two blocks, global average
/// pooling. Output [N, widths[3]].
class Encoder {
 public:
  Encoder(std::int64_t in_channels, const EncoderPreset& preset, Rng& rng)
      : stem_(Conv2d(in_channels, preset.widths[0], preset.stem_kernel, 2, preset.stem_padding, false, rng)),
        stem_bn_(preset.widths[0]),
        out_features_(preset.widths[3]) {
    std::int64_t in = preset.widths[0];
    for (std::size_t stage = 0; stage < 4; ++stage) {
      const std::int64_t out = preset.widths[stage];
      for (int b = 0; b < 2; ++b) {
        blocks_.emplace_back(in, out, (b == 0 && stage > 0) ? 2 : 1, rng);
        in = out;
      }
    }
  }

  Tensor forward(const Tensor& x, bool training) {
    Tensor h = relu(stem_bn_.forward(stem_.forward(x), training));
    h = max_pool2d(h, 3, 2, 1);
    for (auto& b : blocks_) h = b.forward(h, training);
    return global_avg_pool(h);
  }

  void make_deformable(std::int64_t first_groups, std::int64_t groups) {
    stem_.make_deformable(first_groups);
    for (auto& b : blocks_) b.make_deformable(groups);
  }

  void collect(const std::string& p, TensorList& params, TensorList& buffers) const {
    stem_.collect(p + "stem.conv.", params);
    stem_bn_.collect(p + "stem.bn.", params, buffers);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(p + "layer" + std::to_string(i / 2 + 1) + "." + std::to_string(i % 2) + ".", params, buffers);
  }

  const ConvLayer& stem() const { return stem_; }
  std::int64_t out_features() const { return out_features_; }

 private:
  ConvLayer stem_;
  BatchNorm2d stem_bn_;
  std::vector<BasicBlock> blocks_;
  std::int64_t out_features_;
};

/// Anything the training loop can fit: maps a batch to [N, |outputs|].
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual Tensor forward(const Batch& batch) = 0;
  virtual const std::vector<Trait>& outputs() const = 0;
  virtual void set_training(bool training) = 0;
  virtual TensorList parameters() const = 0;
  virtual TensorList buffers() const { return {}; }
};

/// Target columns of `batch` for the given traits: [N, |traits|].
inline Tensor select_targets(const Batch& batch, const std::vector<Trait>& traits) {
  const std::int64_t n = batch.size(), m = static_cast<std::int64_t>(traits.size());
  std::vector<double> out(static_cast<std::size_t>(n * m));
  auto t = batch.targets.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      out[i * m + j] = t[i * static_cast<std::int64_t>(kNumTraits) + static_cast<std::int64_t>(trait_index(traits[j]))];
  return Tensor::from({n, m}, std::move(out));
}

class Model : public Regressor {
 public:
  const ModelConfig& config() const { return config_; }
  const std::vector<Trait>& outputs() const override { return config_.outputs; }
  void set_training(bool training) override { training_ = training; }
  bool training() const { return training_; }

  Tensor forward(const Batch& batch) override {
    std::vector<Tensor> features;
    if (config_.fusion == Fusion::kEarly) {
      features.push_back(encoders_[0].forward(concat({batch.rgb, batch.depth}), training_));
    } else {
      for (std::size_t i = 0; i < config_.inputs.size(); ++i) {
        Tensor x = config_.inputs[i] == InputKind::kRgb ? batch.rgb : adapter_.forward(batch.depth);
        features.push_back(encoders_[i].forward(x, training_));
      }
    }
    Tensor h = features.size() == 1 ? features[0] : concat(features);
    h = relu(fc1_.forward(relu(h)));
    return fc2_.forward(h);
  }

  TensorList parameters() const override {
    TensorList params, buffers;
    collect(params, buffers);
    return params;
  }

  TensorList buffers() const override {
    TensorList params, buffers;
    collect(params, buffers);
    return buffers;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += static_cast<std::int64_t>(p.tensor.numel());
    return n;
  }

  /// The conv applied first in forward order, and the tensor it receives
  /// for `batch`: the depth adapter for a depth-first model, otherwise the
  /// first encoder's stem.
  const ConvLayer& first_conv() const {
    if (config_.fusion == Fusion::kMid && config_.inputs[0] == InputKind::kDepth) return adapter_;
    return encoders_[0].stem();
  }

  Tensor first_conv_input(const Batch& batch) const {
    if (config_.fusion == Fusion::kEarly) return concat({batch.rgb, batch.depth});
    return config_.inputs[0] == InputKind::kRgb ? batch.rgb : batch.depth;
  }

 private:
  friend Model build(const ModelConfig& config);

  void collect(TensorList& params, TensorList& buffers) const {
    if (config_.fusion == Fusion::kEarly) {
      encoders_[0].collect("fused.", params, buffers);
    } else {
      for (std::size_t i = 0; i < config_.inputs.size(); ++i) {
        const std::string p = std::string(input_name(config_.inputs[i])) + ".";
        if (config_.inputs[i] == InputKind::kDepth) adapter_.collect(p + "adapter.", params);
        encoders_[i].collect(p, params, buffers);
      }
    }
    fc1_.collect("head.fc1.", params);
    fc2_.collect("head.fc2.", params);
  }

  ModelConfig config_;
  std::vector<Encoder> encoders_;
  ConvLayer adapter_;
  Linear fc1_, fc2_;
  bool training_ = false;
};

/// Builds and initializes from config.seed; deformable models are built as
/// standard models first and then converted, so both kinds share weights.
inline Model build(const ModelConfig& config) {
  config.validate();
  const EncoderPreset preset = encoder_preset(config.encoder);
  Rng rng(config.seed);
  Model m;
  m.config_ = config;
  std::int64_t features = 0;
  if (config.fusion == Fusion::kEarly) {
    m.encoders_.emplace_back(4, preset, rng);
    features = preset.widths[3];
  } else {
    for (auto in : config.inputs) {
      if (in == InputKind::kDepth) m.adapter_ = ConvLayer(Conv2d(1, 3, 1, 1, 0, true, rng));
      m.encoders_.emplace_back(3, preset, rng);
      features += preset.widths[3];
    }
  }
  m.fc1_ = Linear(features, config.head_hidden, rng);
  m.fc2_ = Linear(config.head_hidden, static_cast<std::int64_t>(config.outputs.size()), rng);
  if (config.conv_kind == ConvKind::kDeformable) {
    if (config.fusion == Fusion::kMid && config.has(InputKind::kDepth))
      m.adapter_.make_deformable(config.first_offset_groups);
    for (auto& e : m.encoders_) e.make_deformable(config.first_offset_groups, config.offset_groups);
  }
  return m;
}

/// The 18 mid-fusion configurations per conv kind: 10 SISO, 2 SIMO, 5 MISO,
/// 1 MIMO.
inline std::vector<ModelConfig> enumerate_ablation(ConvKind kind, const ModelConfig& base = {}) {
  std::vector<ModelConfig> out;
  auto make = [&](std::vector<InputKind> in, std::vector<Trait> outs) {
    ModelConfig c = base;
    c.inputs = std::move(in);
    c.outputs = std::move(outs);
    c.conv_kind = kind;
    c.fusion = Fusion::kMid;
    out.push_back(std::move(c));
  };
  const std::vector<Trait> all(kAllTraits.begin(), kAllTraits.end());
  for (auto in : {InputKind::kRgb, InputKind::kDepth})
    for (auto t : kAllTraits) make({in}, {t});
  for (auto in : {InputKind::kRgb, InputKind::kDepth}) make({in}, all);
  for (auto t : kAllTraits) make({InputKind::kRgb, InputKind::kDepth}, {t});
  make({InputKind::kRgb, InputKind::kDepth}, all);
  return out;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Parameters and batch-norm buffers of `model`, plus metadata.
inline Checkpoint save_weights(const Regressor& model, nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  if (const auto* m = dynamic_cast<const Model*>(&model)) ckpt.metadata["model"] = model_config_to_json(m->config());
  auto add = [&](const TensorList& list) {
    for (const auto& [name, t] : list)
      ckpt.records.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  };
  add(model.parameters());
  add(model.buffers());
  return ckpt;
}

inline bool is_offset_parameter(const std::string& name) { return name.find(".offset.") != std::string::npos; }

/// Copies checkpoint values into the model by name. Offset parameters the
/// checkpoint lacks are zeroed, which turns a standard-conv checkpoint into
/// an equivalent deformable model. Any other missing, extra or mis-shaped
/// record is an error naming every offending entry.
inline void load_weights(Regressor& model, const Checkpoint& ckpt) {
  TensorList targets = model.parameters();
  const TensorList buffers = model.buffers();
  targets.insert(targets.end(), buffers.begin(), buffers.end());
  std::vector<std::string> problems;
  std::set<std::string> used;
  for (auto& [name, t] : targets) {
    const CheckpointRecord* rec = ckpt.find(name);
    if (rec == nullptr) {
      if (!is_offset_parameter(name)) problems.push_back("missing " + name);
      continue;
    }
    used.insert(name);
    if (rec->shape != t.shape())
      problems.push_back("shape " + name + " " + shape_str(rec->shape) + " vs model " + shape_str(t.shape()));
  }
  for (const auto& r : ckpt.records)
    if (!used.contains(r.name)) {
      bool known = false;
      for (const auto& [name, t] : targets) known = known || name == r.name;
      if (!known) problems.push_back("unexpected " + r.name);
    }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model (" + std::to_string(problems.size()) + " problem(s)): ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
  for (auto& [name, t] : targets) {
    Tensor dst = t;
    const CheckpointRecord* rec = ckpt.find(name);
    auto out = dst.mutable_data();
    if (rec == nullptr) {
      std::fill(out.begin(), out.end(), 0.0);
    } else {
      std::copy(rec->data.begin(), rec->data.end(), out.begin());
    }
  }
}

/// Builds the model described by a checkpoint's metadata (optionally with a
/// different conv kind) and loads its weights.
inline Model model_from_checkpoint(const Checkpoint& ckpt, std::optional<ConvKind> conv_kind = std::nullopt) {
  if (!ckpt.metadata.contains("model")) throw ConfigError("checkpoint has no model configuration in its metadata");
  ModelConfig cfg = model_config_from_json(ckpt.metadata.at("model"));
  if (conv_kind) cfg.conv_kind = *conv_kind;
  Model m = build(cfg);
  load_weights(m, ckpt);
  return m;
}

}  // namespace traitnet
