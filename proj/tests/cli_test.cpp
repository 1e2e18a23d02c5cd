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

#include <cstdlib>
#include <sstream>

#include "support/temp_dir.hpp"
#include "traitnet/cli.hpp"

namespace traitnet {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return detail::read_file_bytes(p); }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    const auto r = run({"--seed", "5", "gen-synthetic", "--out", data().string(), "--count", "16", "--size", "32"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path root() { return dir_->path(); }
  static fs::path data() { return root() / "data"; }

  static std::vector<std::string> quick_train(const fs::path& out) {
    return {"--seed", "1", "train", "--data", data().string(), "--out", out.string(), "--epochs", "1",
            "--head-hidden", "8", "--batch-size", "4"};
  }

 private:
  static testing::TempDir* dir_;
};

testing::TempDir* CliTest::dir_ = nullptr;

void expect_error_json(const Result& r, const std::string& kind) {
  const auto j = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(j.at("error").at("kind"), kind);
  EXPECT_FALSE(j.at("error").at("message").get<std::string>().empty());
}

TEST_F(CliTest, HelpDocumentsDefaults) {
  const auto train = run({"train", "--help"});
  EXPECT_EQ(train.code, 0);
  EXPECT_NE(train.out.find("[0.0005]"), std::string::npos);
  EXPECT_NE(train.out.find("200,900,650,1450"), std::string::npos);
  EXPECT_NE(train.out.find("700 x 800"), std::string::npos);
  const auto viz = run({"viz-offsets", "--help"});
  EXPECT_NE(viz.out.find("--threshold FLOAT [3]"), std::string::npos);
  for (const char* sub : {"gen-synthetic", "eval", "ablate", "convert-checkpoint"})
    EXPECT_EQ(run({sub, "--help"}).code, 0) << sub;
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, UsageErrorsExitTwoWithJson) {
  const auto unknown = run({"train", "--data", data().string(), "--out", (root() / "u").string(), "--bogus"});
  EXPECT_EQ(unknown.code, cli::kExitUsage);
  expect_error_json(unknown, "usage");
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", (root() / "missing.ckpt").string(), "--data", data().string()}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"train", "--data", (root() / "nowhere").string(), "--out", (root() / "u").string()}).code,
            cli::kExitUsage);
  auto bad_trait = quick_train(root() / "u");
  bad_trait.insert(bad_trait.end(), {"--outputs", "weight"});
  EXPECT_EQ(run(bad_trait).code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(root() / "u"));
}

TEST_F(CliTest, FlagsAreValidatedBeforeWriting) {
  const fs::path out = root() / "never";
  auto args = quick_train(out);
  args.insert(args.end(), {"--lr", "0"});
  EXPECT_EQ(run(args).code, cli::kExitUsage);
  args = quick_train(out);
  args.insert(args.end(), {"--crop", "0,10,0,10,3"});
  EXPECT_EQ(run(args).code, cli::kExitUsage);
  args = quick_train(out);
  args.insert(args.end(), {"--crop", "default"});  // 32x32 images are too small for it
  EXPECT_EQ(run(args).code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, RuntimeFailureExitsOne) {
  const fs::path bad = root() / "garbage.ckpt";
  detail::write_file_bytes(bad, "not a checkpoint");
  const auto r = run({"eval", "--checkpoint", bad.string(), "--data", data().string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  expect_error_json(r, "runtime");
  EXPECT_NE(r.err.find("ParseError"), std::string::npos);
}

TEST_F(CliTest, GenSyntheticIsReproducibleAndRefusesToClobber) {
  const fs::path again = root() / "data_again";
  ASSERT_EQ(run({"--seed", "5", "gen-synthetic", "--out", again.string(), "--count", "16", "--size", "32"}).code, 0);
  EXPECT_EQ(slurp(again / "manifest.json").size(), slurp(data() / "manifest.json").size());
  EXPECT_EQ(slurp(again / "images/s0007_depth.png"), slurp(data() / "images/s0007_depth.png"));
  EXPECT_EQ(run({"gen-synthetic", "--out", again.string(), "--count", "16", "--size", "32"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--seed", "6", "gen-synthetic", "--out", again.string(), "--count", "16", "--size", "32", "--force"})
                .code,
            0);
  EXPECT_NE(slurp(again / "images/s0007_depth.png"), slurp(data() / "images/s0007_depth.png"));
}

TEST_F(CliTest, TrainThenEvalReproducesReport) {
  const fs::path run_dir = root() / "r1";
  const auto r = run(quick_train(run_dir));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"best.ckpt", "config.json", "metrics.csv", "report.json", "train_log.jsonl"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  // Every stdout line is JSON.
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) EXPECT_NO_THROW((void)nlohmann::json::parse(line)) << line;
  const auto ev = run({"eval", "--checkpoint", (run_dir / "best.ckpt").string(), "--data", data().string(), "--split",
                       "test", "--out", (root() / "eval.json").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto report = nlohmann::json::parse(slurp(root() / "eval.json"));
  const auto trained = nlohmann::json::parse(slurp(run_dir / "report.json")).at("test");
  EXPECT_EQ(report.at("nmse").get<double>(), trained.at("nmse").get<double>());
  EXPECT_EQ(report.at("config_hash"), trained.at("config_hash"));
  EXPECT_EQ(run({"eval", "--checkpoint", (run_dir / "best.ckpt").string(), "--data", data().string(), "--split",
                 "holdout"})
                .code,
            cli::kExitUsage);
}

TEST_F(CliTest, RerunWithSameSeedGivesIdenticalArtifacts) {
  ASSERT_EQ(run(quick_train(root() / "a")).code, 0);
  ASSERT_EQ(run(quick_train(root() / "b")).code, 0);
  for (const char* f : {"best.ckpt", "config.json", "metrics.csv", "report.json"})
    EXPECT_EQ(slurp(root() / "a" / f), slurp(root() / "b" / f)) << f;
}

TEST_F(CliTest, ConfigFileWithFlagPrecedence) {
  const fs::path cfg = root() / "run.toml";
  detail::write_file_bytes(cfg, "seed = 9\n[train]\nlr = 0.002\nepochs = 1\nhead-hidden = 8\nconv = \"dcnn\"\n");
  const fs::path out = root() / "cfg_run";
  const auto r = run({"--config", cfg.string(), "train", "--data", data().string(), "--out", out.string(), "--lr",
                      "0.003"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = nlohmann::json::parse(slurp(out / "config.json"));
  EXPECT_EQ(c.at("lr").get<double>(), 0.003);
  EXPECT_EQ(c.at("max_epochs").get<int>(), 1);
  EXPECT_EQ(c.at("seed").get<int>(), 9);
  EXPECT_EQ(c.at("model").at("conv_kind"), "deformable");

  detail::write_file_bytes(cfg, "[train]\nbatch_size = 4\n");
  EXPECT_EQ(run({"--config", cfg.string(), "train", "--data", data().string(), "--out", out.string()}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"--config", (root() / "absent.toml").string(), "train"}).code, cli::kExitUsage);
}

TEST_F(CliTest, DataRootFromEnvironment) {
  ::setenv(cli::kDataEnv, data().c_str(), 1);
  const auto r = run({"train", "--out", (root() / "env_run").string(), "--epochs", "0", "--head-hidden", "4"});
  ::unsetenv(cli::kDataEnv);
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, ConvertAndVisualize) {
  const fs::path run_dir = root() / "viz_run";
  ASSERT_EQ(run(quick_train(run_dir)).code, 0);
  const fs::path dcnn = run_dir / "dcnn.ckpt";
  ASSERT_EQ(run({"convert-checkpoint", "--in", (run_dir / "best.ckpt").string(), "--out", dcnn.string()}).code, 0);
  const std::string image = (data() / "images/s0000_rgb.png").string();
  // The standard checkpoint has no offsets to show.
  EXPECT_EQ(run({"viz-offsets", "--checkpoint", (run_dir / "best.ckpt").string(), "--image", image, "--out",
                 (root() / "x.ppm").string()})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(run({"viz-offsets", "--checkpoint", dcnn.string(), "--image", image, "--kernel-points", "0,9", "--out",
                 (root() / "x.ppm").string()})
                .code,
            cli::kExitUsage);
  EXPECT_FALSE(fs::exists(root() / "x.ppm"));
  const fs::path out = root() / "viz" / "overlay.ppm";
  const auto r = run({"viz-offsets", "--checkpoint", dcnn.string(), "--image", image, "--threshold", "0", "--out",
                      out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Raster img = read_raster(out);
  EXPECT_EQ(img.width, 32);
  EXPECT_EQ(img.height, 32 + OverlayOptions{}.legend_height);
  const auto side = nlohmann::json::parse(slurp(out.string() + ".json"));
  EXPECT_EQ(side.at("kernel_points"), (std::vector<int>{0, 2, 6, 8}));
  // Zero-initialized offsets: with threshold 0 every tap sits on its base.
  for (const auto& p : side.at("points")) EXPECT_EQ(p.at("base"), p.at("location"));
}

TEST_F(CliTest, AblateWritesTableOneGrid) {
  const fs::path out = root() / "ablation";
  const auto r = run({"ablate", "--data", data().string(), "--out", out.string(), "--conv", "cnn", "--epochs", "1",
                      "--head-hidden", "4", "--batch-size", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(out / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 6);
  EXPECT_TRUE(fs::exists(out / "ablation.md"));
  EXPECT_TRUE(fs::exists(out / "standard" / "SISO-D-leaf_area" / "best.ckpt"));
  EXPECT_EQ(run({"ablate", "--data", data().string(), "--out", out.string(), "--conv", "resnet"}).code,
            cli::kExitUsage);
}

}  // namespace
}  // namespace traitnet
