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

#include <cmath>
#include <filesystem>

#include "support/temp_dir.hpp"
#include "traitnet/synthetic.hpp"
#include "traitnet/train.hpp"

namespace traitnet {
namespace {

/// One 1x1 conv weight applied to the depth channel, averaged over pixels:
/// predicts fresh_weight = w * mean(depth).
class ToyModel : public Regressor {
 public:
  explicit ToyModel(double w0) : w_(Tensor::from({1, 1, 1, 1}, {w0}, true)) {}
  Tensor forward(const Batch& b) override { return global_avg_pool(conv2d(b.depth, w_)); }
  const std::vector<Trait>& outputs() const override { return outputs_; }
  void set_training(bool) override {}
  TensorList parameters() const override { return {{"w", w_}}; }
  double weight() const { return w_.data()[0]; }

 private:
  Tensor w_;
  std::vector<Trait> outputs_ = {Trait::kFreshWeight};
};

/// Counts reads of the held-out split.
class CountingSource : public SampleSource {
 public:
  explicit CountingSource(std::vector<Sample> s) : samples_(std::move(s)) {}
  std::vector<Sample> load() override {
    ++reads;
    return samples_;
  }
  int reads = 0;

 private:
  std::vector<Sample> samples_;
};

// Constant-depth images x ~ U(1, 2) labelled y = 3x.
std::vector<Sample> linear_data(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(1.0, 2.0);
    Sample s;
    s.id = "lin" + std::to_string(seed) + "_" + std::to_string(i);
    s.rgb = Tensor::zeros({3, 8, 8});
    s.depth = Tensor::full({1, 8, 8}, x);
    s.traits.values = {3.0 * x, 0, 0, 0, 0};
    out.push_back(s);
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.lr = 0.05;
  c.batch_size = 4;
  c.max_epochs = 10;
  c.patience = 10;
  c.augment = false;
  c.seed = 1;
  return c;
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.lr, 5e-4);
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_epochs = 10;
  c.patience = 11;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.grad_clip = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfigTest, JsonRoundTrip) {
  TrainConfig c = toy_config();
  c.grad_clip = 2.5;
  c.sampler = SamplerKind::kVarietyStratified;
  c.model.conv_kind = ConvKind::kDeformable;
  const auto back = train_config_from_json(nlohmann::json::parse(train_config_to_json(c).dump()));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
}

TEST(TrainTest, ZeroEpochsEvaluatesUntrainedModel) {
  ToyModel m(1.0);
  auto train_set = linear_data(8, 1), val = linear_data(4, 2);
  CountingSource test(linear_data(4, 3));
  TrainConfig c = toy_config();
  c.max_epochs = 0;
  const RunRecord r = train(c, m, train_set, val, test);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_EQ(m.weight(), 1.0);
  EXPECT_EQ(test.reads, 1);
  // Predicting x for 3x leaves (2/3)^2 of the energy in every term.
  EXPECT_NEAR(r.test_report.nmse, 4.0 / 9.0, 1e-12);
}

TEST(TrainTest, LinearToyMatchesClosedForm) {
  auto train_set = linear_data(16, 4);
  // NMSE over the data is minimized by w* = sum(x y) / sum(x^2).
  double sxy = 0, sxx = 0;
  for (const auto& s : train_set) {
    const double x = s.depth.data()[0];
    sxy += x * s.traits.fresh_weight();
    sxx += x * x;
  }
  const double w_star = sxy / sxx;
  ToyModel m(0.5);
  CountingSource test(linear_data(4, 5));
  TrainConfig c = toy_config();
  c.batch_size = 16;  // one step per epoch
  c.max_epochs = 500;
  c.patience = 500;
  train(c, m, train_set, {}, test);
  EXPECT_NEAR(m.weight(), w_star, 0.01 * w_star);
  EXPECT_NEAR(w_star, 3.0, 1e-12);
}

TEST(TrainTest, FirstStepsStrictlyDecreaseLossOnFixedBatch) {
  ToyModel m(0.5);
  const auto data = linear_data(8, 6);
  const Batch b = make_batch(data);
  std::vector<Tensor> params = {m.parameters()[0].tensor};
  Adam opt(params, AdamOptions{});
  ASSERT_EQ(opt.lr(), 5e-4);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 10; ++k) {
    const Tensor loss = nmse_loss(m.forward(b), select_targets(b, m.outputs()), m.outputs());
    EXPECT_LT(loss.item(), prev) << "step " << k;
    prev = loss.item();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
}

TEST(TrainTest, SameSeedSameCurves) {
  auto train_set = linear_data(10, 7), val = linear_data(4, 8);
  TrainConfig c = toy_config();
  c.augment = true;
  c.sampler = SamplerKind::kFreshWeightBins;
  std::vector<std::vector<double>> curves;
  for (int rep = 0; rep < 2; ++rep) {
    ToyModel m(0.5);
    VectorSource test(linear_data(3, 9));
    const auto r = train(c, m, train_set, val, test);
    std::vector<double> curve;
    for (const auto& e : r.epochs) {
      curve.push_back(e.train_loss);
      curve.push_back(e.val_nmse);
    }
    curves.push_back(curve);
  }
  EXPECT_EQ(curves[0], curves[1]);
  c.seed = 2;
  ToyModel m(0.5);
  VectorSource test(linear_data(3, 9));
  EXPECT_NE(train(c, m, train_set, val, test).epochs[0].train_loss, curves[0][0]);
}

TEST(TrainTest, NonFiniteLossReportsEpochAndBatch) {
  auto train_set = linear_data(8, 10);
  Tensor poisoned = train_set[5].depth;
  poisoned.mutable_data()[0] = std::nan("");
  ToyModel m(0.5);
  VectorSource test(linear_data(2, 11));
  TrainConfig c = toy_config();
  c.sampler = SamplerKind::kRandom;
  try {
    train(c, m, train_set, {}, test);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_GE(e.batch(), 1);
    EXPECT_LE(e.batch(), 2);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(TrainTest, TestSplitReadExactlyOnce) {
  ToyModel m(0.5);
  CountingSource test(linear_data(4, 12));
  TrainConfig c = toy_config();
  c.max_epochs = 5;
  c.patience = 5;
  train(c, m, linear_data(8, 13), linear_data(4, 14), test);
  EXPECT_EQ(test.reads, 1);
}

PreparedData small_synthetic(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticOptions o;
  o.count = count;
  o.size = size;
  o.test_count = count / 4;
  const auto ds = generate_synthetic(o, rng);
  SplitSpec spec;
  spec.test_ids = ds.manifest.test_ids;
  spec.seed = seed;
  return prepare_data(ds.manifest, ds.samples, spec);
}

TEST(TrainTest, BestCheckpointHasMinimumValidationNmse) {
  const auto data = small_synthetic(24, 32, 1);
  TrainConfig c;
  c.model.head_hidden = 16;
  c.max_epochs = 6;
  c.patience = 2;
  c.lr = 2e-3;
  c.batch_size = 8;
  const RunRecord r = train(c, data);
  ASSERT_FALSE(r.epochs.empty());
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& e : r.epochs)
    if (e.val_nmse < best) best = e.val_nmse, best_epoch = e.epoch;
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_val_nmse, best);
  if (r.early_stopped) EXPECT_EQ(static_cast<int>(r.epochs.size()), best_epoch + c.patience);
  // Reloading the stored checkpoint reproduces the same validation NMSE.
  Model reloaded = model_from_checkpoint(r.best);
  EXPECT_EQ(nmse(predict_split(reloaded, data.val)), best);
  EXPECT_TRUE(r.best.metadata.contains("normalization"));
}

std::string slurp(const std::filesystem::path& p) { return detail::read_file_bytes(p); }

TEST(TrainTest, RunDirectoryIsReproducible) {
  const auto data = small_synthetic(20, 32, 2);
  testing::TempDir a("run_a"), b("run_b");
  TrainConfig c;
  c.model.head_hidden = 8;
  c.max_epochs = 2;
  c.patience = 2;
  for (const auto* dir : {&a, &b}) {
    c.out_dir = dir->path().string();
    const auto r = train(c, data);
    EXPECT_EQ(r.best_checkpoint_path, (dir->path() / "best.ckpt").string());
  }
  for (const char* f : {"config.json", "metrics.csv", "best.ckpt", "report.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_TRUE(std::filesystem::exists(a / "train_log.jsonl"));
  const auto report = nlohmann::json::parse(slurp(a / "report.json"));
  EXPECT_EQ(report.at("test").at("n"), data.test.size());
  const auto csv = slurp(a / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(PrepareDataTest, NormalizesWithTrainStatsOnly) {
  const auto data = small_synthetic(20, 16, 3);
  for (const auto& id : data.stats.source_ids)
    EXPECT_NE(std::find(data.split.train.begin(), data.split.train.end(), id), data.split.train.end());
  EXPECT_EQ(data.stats.source_ids.size(), data.train.size());
  EXPECT_NO_THROW(check_no_leakage(data.stats, data.split));
}

TEST(AblationTest, TableShapeAggregationAndFailures) {
  auto data = small_synthetic(16, 32, 4);
  // A test split whose heights are all zero makes every run that predicts
  // height fail at evaluation; the sweep must carry on.
  for (auto& s : data.test) s.traits[Trait::kHeight] = 0.0;
  TrainConfig base;
  base.model.head_hidden = 4;
  base.max_epochs = 1;
  base.patience = 1;
  base.batch_size = 8;
  const auto r = run_ablation({ConvKind::kStandard, ConvKind::kDeformable}, base, data);
  EXPECT_EQ(r.runs.size(), 36u);
  EXPECT_EQ(r.cells.size(), 12u);
  const auto& siso = r.cell("SISO-R", ConvKind::kStandard);
  EXPECT_FALSE(siso.ok());  // the height sub-model failed
  EXPECT_EQ(siso.failures.size(), 1u);
  EXPECT_FALSE(r.cell("MIMO", ConvKind::kDeformable).ok());
  // Fresh-weight MSE of SISO-R comes from the rgb/fresh_weight run.
  for (const auto& run : r.runs)
    if (run.config.name() == "SISO-R-fresh_weight" && run.config.conv_kind == ConvKind::kStandard)
      EXPECT_EQ(siso.mse[0], run.record->test_report.mse.at("fresh_weight"));
  const auto csv = ablation_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_NE(csv.find("FAILED"), std::string::npos);
  EXPECT_NE(ablation_markdown(r).find("Failed runs"), std::string::npos);
}

TEST(AblationTest, SingleOutputRowsSumSubModelNmse) {
  const auto data = small_synthetic(16, 32, 5);
  TrainConfig base;
  base.model.head_hidden = 4;
  base.max_epochs = 1;
  base.patience = 1;
  const auto r = run_ablation({ConvKind::kStandard}, base, data);
  ASSERT_EQ(r.runs.size(), 18u);
  double siso_d = 0;
  int parts = 0;
  for (const auto& run : r.runs)
    if (ablation_row(run.config) == "SISO-D") {
      ASSERT_TRUE(run.record) << run.error;
      siso_d += run.record->test_report.nmse;
      ++parts;
    }
  EXPECT_EQ(parts, 5);
  EXPECT_EQ(r.cell("SISO-D", ConvKind::kStandard).nmse, siso_d);
  EXPECT_EQ(ablation_header(r).size(), 7u);
  const auto again = run_ablation({ConvKind::kStandard}, base, data);
  EXPECT_EQ(ablation_csv(again), ablation_csv(r));
}

}  // namespace
}  // namespace traitnet
