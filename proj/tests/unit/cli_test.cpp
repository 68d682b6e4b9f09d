// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"
#include "neurodiff/checkpoint.hpp"
#include "neurodiff/store.hpp"
#include "run_config.hpp"
#include "test_util.hpp"

namespace neurodiff::cli {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value.c_str(), 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

TEST(RunConfig, DefaultsFollowTheReferenceSetup) {
  const auto cfg = RunConfig::resolve("", {});
  const auto m = cfg.model();
  EXPECT_EQ(m.level_channels, (std::array<std::size_t, 4>{128, 256, 512, 512}));
  EXPECT_EQ(m.cross_attn_dim, 768u);
  EXPECT_EQ(m.fusion, conditioning::FusionMode::kCrossAttention);
  const auto t = cfg.train();
  EXPECT_EQ(t.learning_rate, 1e-4);
  EXPECT_EQ(t.weight_decay, 1e-5);
  EXPECT_EQ(t.epochs, 50);
  EXPECT_EQ(t.schedule.steps, 1000);
  EXPECT_EQ(t.schedule.beta_start, 1e-4);
  EXPECT_EQ(t.schedule.beta_end, 0.02);
}

TEST(RunConfig, Presets) {
  const auto eeg = RunConfig::resolve("", {}, "eeg-things2");
  EXPECT_EQ(eeg.model().sample_channels, 63u);
  EXPECT_EQ(eeg.model().sample_timepoints, 250u);
  EXPECT_EQ(eeg.train().batch_size, 16u);
  const auto meg = RunConfig::resolve(R"({"preset": "meg-things"})", {});
  EXPECT_EQ(meg.model().sample_channels, 271u);
  EXPECT_EQ(meg.model().sample_timepoints, 200u);
  EXPECT_EQ(meg.train().batch_size, 4u);
  EXPECT_EQ(meg.str("preset"), "meg-things");
  EXPECT_THROW(RunConfig::resolve("", {}, "fmri"), ConfigError);
  // A flag or override beats the file's preset.
  EXPECT_EQ(RunConfig::resolve(R"({"preset": "meg-things"})", {}, "eeg-things2")
                .model()
                .sample_channels,
            63u);
}

TEST(RunConfig, PrecedenceAndKeyPaths) {
  const std::string file = R"({"preset": "meg-things", "model": {"heads": 4}, "train.epochs": 7})";
  const auto cfg = RunConfig::resolve(file, {"model.heads=2", "model.fusion=addition",
                                             "subjects=[\"sub-02\"]", "train.learning_rate=3e-4"});
  EXPECT_EQ(cfg.model().heads, 2u);
  EXPECT_EQ(cfg.model().fusion, conditioning::FusionMode::kAddition);
  EXPECT_EQ(cfg.train().epochs, 7);
  EXPECT_EQ(cfg.train().learning_rate, 3e-4);
  EXPECT_EQ(cfg.train().batch_size, 4u);
  EXPECT_EQ(cfg.strings("subjects"), (std::vector<std::string>{"sub-02"}));
  const auto snap = cfg.snapshot();
  EXPECT_EQ(snap["model.heads"], 2);
  EXPECT_EQ(snap["model.fusion"], "addition");
  EXPECT_EQ(snap["preset"], "meg-things");
  // Snapshot keys are sorted and round-trip through resolve.
  EXPECT_EQ(RunConfig::resolve(snap.dump(), {}).snapshot(), snap);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(RunConfig::resolve("{", {}), ConfigError);
  EXPECT_THROW(RunConfig::resolve("[1]", {}), ConfigError);
  EXPECT_THROW(RunConfig::resolve(R"({"model": {"haeds": 2}})", {}), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"model.heads"}), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"model.heads=-1"}), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"schedule.beta_start=high"}), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"model.fusion=sum"}).model(), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"model.level_channels=[8,8]"}).model(), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"schedule.beta_end=2"}).schedule(), ConfigError);
  EXPECT_THROW(RunConfig::resolve("", {"train.batch_size=0"}).train(), ConfigError);
  try {
    RunConfig::resolve("", {"model.hedas=2"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.heads"), std::string::npos);
  }
}

TEST(RunConfig, RunRootEnvironment) {
  ScopedEnv env(kRunRootEnv, "/data/runs");
  EXPECT_EQ(RunConfig::resolve("", {"output=exp1"}).output_dir(), fs::path("/data/runs/exp1"));
  EXPECT_EQ(RunConfig::resolve("", {"output=/abs/exp"}).output_dir(), fs::path("/abs/exp"));
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(exit_code(ErrorKind::kConfig), kExitConfig);
  EXPECT_EQ(exit_code(ErrorKind::kCompatibility), kExitConfig);
  EXPECT_EQ(exit_code(ErrorKind::kData), kExitData);
  EXPECT_EQ(exit_code(ErrorKind::kFormat), kExitData);
  EXPECT_EQ(exit_code(ErrorKind::kIo), kExitData);
  EXPECT_EQ(exit_code(ErrorKind::kNumeric), kExitNumeric);
  EXPECT_EQ(error_line(3, "data", "bad \"x\"\nmore"),
            "error code=3 kind=data message=\"bad \\\"x\\\"\\nmore\"");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, kExitConfig);
  EXPECT_EQ(invoke({"bogus"}).code, kExitConfig);
  auto r = invoke({"validate", "-c", "/nonexistent/config.json"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_EQ(r.err.rfind("error code=2 kind=config message=", 0), 0u);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
}

struct CliFixture : ::testing::Test {
  TempDir dir{"cli"};
  std::string config;

  void SetUp() override {
    auto r = invoke({"synth-data", "--out", (dir / "data").string(), "--trials", "32",
                     "--channels", "8", "--timepoints", "32", "--subjects", "2", "--images", "8"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    config = (dir / "data" / "config.json").string();
  }

  std::vector<std::string> args(const std::string& command,
                                std::vector<std::string> extra = {}) const {
    std::vector<std::string> a = {command,    "-c",    config, "--set",
                                  "schedule.steps=20", "--set", "train.epochs=2"};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }
};

TEST_F(CliFixture, SynthDataPassesArchiveValidation) {
  const auto a = store::Archive::open(dir / "data" / "archive");
  EXPECT_EQ(a.size(), 64u);
  EXPECT_EQ(a.manifest().n_channels, 8u);
  EXPECT_EQ(a.manifest().n_timepoints, 32u);
  EXPECT_TRUE(fs::exists(dir / "data" / "embeddings"));
  EXPECT_TRUE(fs::exists(dir / "data" / "synth-data.resolved.json"));
}

TEST_F(CliFixture, ValidatePrintsParameterCount) {
  auto r = invoke(args("validate"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto cfg = RunConfig::resolve(testing::slurp(config), {});
  EXPECT_EQ(r.out.rfind("ok parameters=" + std::to_string(denoiser::parameter_count(cfg.model())), 0),
            0u);
  // Cross-field checks.
  EXPECT_EQ(invoke(args("validate", {"--set", "model.sample_channels=9"})).code, kExitConfig);
  EXPECT_EQ(invoke(args("validate", {"--set", "model.cross_attn_dim=512"})).code, kExitConfig);
  EXPECT_EQ(invoke(args("validate", {"--set", "data.montage=/missing.csv"})).code, kExitConfig);
  EXPECT_EQ(invoke(args("validate", {"--set", "subjects=[\"sub-09\"]"})).code, kExitConfig);
}

TEST_F(CliFixture, TrainGenerateEvaluate) {
  auto t = invoke(args("train"));
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const fs::path out = dir / "data" / "run";
  EXPECT_TRUE(fs::exists(final_checkpoint(out, "sub-01")));
  EXPECT_TRUE(fs::exists(out / "train.resolved.json"));
  auto snap = nlohmann::json::parse(testing::slurp(out / "train.resolved.json"));
  EXPECT_EQ(snap["config"]["schedule.steps"], 20);

  auto g = invoke(args("generate"));
  ASSERT_EQ(g.code, kExitOk) << g.err;
  const auto gen = store::Archive::open(generated_dir(out, "sub-02"));
  EXPECT_FALSE(gen.select("sub-02", store::kGenerated).empty());

  auto e = invoke(args("eval-within"));
  ASSERT_EQ(e.code, kExitOk) << e.err;
  const auto report = nlohmann::json::parse(
      testing::slurp(reports_dir(out) / "synthetic_within_mse_pcc.json"));
  ASSERT_EQ(report["mse"].size(), 2u);
  for (const auto& v : report["mse"]) EXPECT_TRUE(std::isfinite(v.get<double>()));
  for (const auto& v : report["pcc"]) EXPECT_TRUE(std::isfinite(v.get<double>()));
  EXPECT_TRUE(fs::exists(reports_dir(out) / "synthetic_within_mse_pcc.csv"));

  auto c = invoke(args("eval-cross"));
  ASSERT_EQ(c.code, kExitOk) << c.err;
  EXPECT_TRUE(fs::exists(reports_dir(out) / "synthetic_cross_mse.csv"));
  EXPECT_TRUE(fs::exists(reports_dir(out) / "synthetic_cross_pcc.json"));
}

// Config plus seed determine every artifact.
TEST_F(CliFixture, RerunsAreByteIdentical) {
  const fs::path out = dir / "data" / "run";
  ASSERT_EQ(invoke(args("train")).code, kExitOk);
  ASSERT_EQ(invoke(args("eval-within")).code, kExitOk);
  const auto ckpt = testing::slurp(final_checkpoint(out, "sub-01"));
  const auto report = testing::slurp(reports_dir(out) / "synthetic_within_mse_pcc.json");
  ASSERT_EQ(invoke(args("train")).code, kExitOk);
  ASSERT_EQ(invoke(args("eval-within")).code, kExitOk);
  EXPECT_EQ(testing::slurp(final_checkpoint(out, "sub-01")), ckpt);
  EXPECT_EQ(testing::slurp(reports_dir(out) / "synthetic_within_mse_pcc.json"), report);
}

TEST_F(CliFixture, DataAndNumericFailuresHaveTheirExitCodes) {
  // Evaluating before training has no checkpoints.
  auto r = invoke(args("eval-within"));
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("run train first"), std::string::npos);
  // A corrupt manifest.
  const auto manifest = dir / "data" / "archive" / "manifest.json";
  ASSERT_TRUE(fs::exists(manifest));
  const auto saved = testing::slurp(manifest);
  io::write_file(manifest, "{ not json");
  EXPECT_EQ(invoke(args("validate")).code, kExitData);
  io::write_file(manifest, saved);
  // A learning rate large enough to overflow the weights.
  auto n = invoke(args("train", {"--set", "train.learning_rate=1e300", "--set",
                                 "train.weight_decay=0"}));
  EXPECT_EQ(n.code, kExitNumeric) << n.err;
}

TEST_F(CliFixture, TopoNeedsMontageAndGeneration) {
  EXPECT_EQ(invoke(args("topo")).code, kExitConfig);
  const auto montage = dir / "m.csv";
  std::string text;
  for (int c = 0; c < 8; ++c) {
    const double a = 2.0 * M_PI * c / 8.0;
    text += "ch" + std::string(c < 9 ? "00" : "0") + std::to_string(c + 1) + "," +
            std::to_string(0.8 * std::cos(a)) + "," + std::to_string(0.8 * std::sin(a)) + "\n";
  }
  io::write_file(montage, text);
  auto with_montage = [&](const std::string& command) {
    return args(command, {"--set", "data.montage=" + montage.string(), "--set",
                          "topo.window_ms=20", "--set", "topo.grid=16"});
  };
  ASSERT_EQ(invoke(with_montage("train")).code, kExitOk);
  EXPECT_EQ(invoke(with_montage("topo")).code, kExitData);
  ASSERT_EQ(invoke(with_montage("generate")).code, kExitOk);
  auto r = invoke(with_montage("topo"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const fs::path out = dir / "data" / "run";
  EXPECT_TRUE(fs::exists(topo_dir(out) / "synthetic_sub-01_topo.png"));
  EXPECT_TRUE(fs::exists(topo_dir(out) / "synthetic_sub-02_topo.json"));
}

}  // namespace
}  // namespace neurodiff::cli
