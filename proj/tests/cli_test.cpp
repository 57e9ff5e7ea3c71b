// Copyright 2026 The PLPCL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "plpcl/plpcl.hpp"

namespace plpcl {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("plpcl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(std::vector<std::string> args) {
    out.str("");
    err.str("");
    return cli::run(args, out, err);
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }

  // Small dataset plus pretrained and trained checkpoints.
  void small_pipeline(const std::string& setting = "ood") {
    ASSERT_EQ(run({"synth", "--classes", "5", "--dim", "8", "--per-class", "30", "--seed", "3", "--out", p("d.jsonl")}), 0);
    const std::vector<std::string> shape = {"--hidden", "16", "--feature", "8", "--batch", "32", "--seed", "2",
                                            "--setting", setting, "--data", p("d.jsonl")};
    std::vector<std::string> pre = {"pretrain", "--epochs", "3", "--lr", "1e-3", "--out", p("pre.json")};
    pre.insert(pre.end(), shape.begin(), shape.end());
    ASSERT_EQ(run(pre), 0) << err.str();
    std::vector<std::string> tr = {"train", "--epochs", "3", "--lr", "1e-3", "--init", p("pre.json"), "--out", p("ckpt.json")};
    tr.insert(tr.end(), shape.begin(), shape.end());
    ASSERT_EQ(run(tr), 0) << err.str();
  }

  fs::path dir;
  std::ostringstream out, err;
};

TEST(Weights, Parsing) {
  EXPECT_EQ(cli::parse_weights("pcl=0"), (std::array<double, 5>{1, 1, 1, 1, 0}));
  EXPECT_EQ(cli::parse_weights("scl=1,ce=0.5,ilcl=2,clcl=1,pcl=1"), (std::array<double, 5>{1, 0.5, 2, 1, 1}));
  EXPECT_FALSE(cli::parse_weights("foo=1"));
  EXPECT_FALSE(cli::parse_weights("pcl"));
  EXPECT_FALSE(cli::parse_weights("pcl=x"));
  EXPECT_FALSE(cli::parse_weights("pcl=-1"));
  EXPECT_FALSE(cli::parse_weights("pcl=1,pcl=0"));
}

TEST_F(Cli, Sha256KnownVector) {
  std::ofstream(p("abc")) << "abc";
  EXPECT_EQ(cli::sha256_file(p("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"synth", "--classes", "3"}), 2);                                    // missing --out
  EXPECT_EQ(run({"synth", "--classes", "1", "--out", p("x.jsonl")}), 2);            // K >= 2
  EXPECT_EQ(run({"pretrain", "--data", "d", "--out", "o", "--setting", "both"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", "d", "--out", "o", "--sigma", "1.5"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", "d", "--out", "o", "--weights", "pcl=oops"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", "d", "--out", "o", "--batch", "1"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", "d", "--out", "o", "--dropout", "1"}), 2);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "o"}), 2);                         // no --init/--resume
  EXPECT_EQ(run({"estimate-k", "--data", "d", "--checkpoint", "c", "--k-cap", "1"}), 2);
  EXPECT_EQ(run({"estimate-k", "--data", "d", "--checkpoint", "c", "--rho", "1"}), 2);
  EXPECT_FALSE(fs::exists(p("x.jsonl")));
}

TEST_F(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({"--version"}), 0);
  EXPECT_NE(out.str().find(cli::kVersion), std::string::npos);
}

TEST_F(Cli, SynthWritesDatasetAndManifest) {
  ASSERT_EQ(run({"synth", "--classes", "3", "--dim", "4", "--per-class", "10", "--seed", "5", "--out", p("a.jsonl")}), 0);
  const EmbeddingDataset ds = load_dataset(p("a.jsonl"));
  EXPECT_EQ(ds.size(), 30u);
  EXPECT_EQ(ds.dim, 4u);
  const auto m = nlohmann::json::parse(slurp(p("a.jsonl.manifest.json")));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["config"]["classes"], 3);
  EXPECT_EQ(m["version"], cli::kVersion);
  ASSERT_EQ(run({"synth", "--classes", "3", "--dim", "4", "--per-class", "10", "--seed", "5", "--out", p("b.jsonl")}), 0);
  EXPECT_EQ(slurp(p("a.jsonl")), slurp(p("b.jsonl")));
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run({"pretrain", "--data", p("missing.jsonl"), "--out", p("o.json")}), 1);
  EXPECT_NE(err.str().find("IoError"), std::string::npos);
  ASSERT_EQ(run({"synth", "--classes", "4", "--dim", "4", "--per-class", "10", "--out", p("d.jsonl")}), 0);
  EXPECT_EQ(run({"pretrain", "--data", p("d.jsonl"), "--out", p("o.json"), "--ood-ratio", "0"}), 1);
  EXPECT_NE(err.str().find("NoClasses"), std::string::npos);
}

TEST_F(Cli, TrainingWritesLogsManifestAndCheckpoint) {
  small_pipeline();
  const auto params = params_from_json(nlohmann::json::parse(slurp(p("ckpt.json"))));
  EXPECT_EQ(params.lineage.back().stage, "train");
  std::ifstream log(p("ckpt.json.log.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], lines);
    for (const char* k : {"loss_total", "loss_scl", "loss_ce", "loss_ilcl", "loss_clcl", "loss_pcl", "n_reliable"})
      EXPECT_TRUE(j.contains(k)) << k;
    ++lines;
  }
  EXPECT_EQ(lines, 3u);
  const auto m = nlohmann::json::parse(slurp(p("ckpt.json.manifest.json")));
  EXPECT_EQ(m["config"]["epochs_train"], 3);
  EXPECT_EQ(m["config"]["train_lr"], 1e-3);
  EXPECT_EQ(m["inputs"]["data"]["sha256"], cli::sha256_file(p("d.jsonl")));
  EXPECT_EQ(m["inputs"]["init"]["sha256"], cli::sha256_file(p("pre.json")));
  const auto devs = m["deviations_from_defaults"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(devs.begin(), devs.end(), "train_lr"), devs.end());
}

TEST_F(Cli, EvalWritesMetricsAndConfusion) {
  small_pipeline("open");
  ASSERT_EQ(run({"eval", "--data", p("d.jsonl"), "--checkpoint", p("ckpt.json"), "--setting", "open", "--seed", "2",
                 "--metrics", p("m.json"), "--confusion", p("c.csv")}),
            0)
      << err.str();
  const auto m = nlohmann::json::parse(slurp(p("m.json")));
  for (const char* k : {"acc", "ari", "nmi", "k_pred"}) EXPECT_TRUE(m.contains(k)) << k;
  EXPECT_GT(m["acc"].get<double>(), 0.0);
  EXPECT_EQ(slurp(p("c.csv")).rfind("truth,cluster_", 0), 0u);
  EXPECT_TRUE(fs::exists(p("m.json.manifest.json")));
  // Same flags, same bytes.
  ASSERT_EQ(run({"eval", "--data", p("d.jsonl"), "--checkpoint", p("ckpt.json"), "--setting", "open", "--seed", "2",
                 "--metrics", p("m2.json")}),
            0);
  EXPECT_EQ(slurp(p("m.json")), slurp(p("m2.json")));
}

TEST_F(Cli, EvalDimensionMismatchExitsOne) {
  small_pipeline();
  ASSERT_EQ(run({"synth", "--classes", "5", "--dim", "6", "--per-class", "30", "--out", p("narrow.jsonl")}), 0);
  EXPECT_EQ(run({"eval", "--data", p("narrow.jsonl"), "--checkpoint", p("ckpt.json"), "--seed", "2"}), 1);
  EXPECT_NE(err.str().find("DimsMismatch"), std::string::npos);
}

TEST_F(Cli, EstimateK) {
  small_pipeline("open");
  ASSERT_EQ(run({"estimate-k", "--data", p("d.jsonl"), "--checkpoint", p("ckpt.json"), "--setting", "open", "--seed",
                 "2", "--k-cap", "6", "--out", p("k.json")}),
            0)
      << err.str();
  const auto k = nlohmann::json::parse(out.str())["k_pred"].get<std::size_t>();
  EXPECT_GE(k, 1u);
  EXPECT_LE(k, 6u);
  EXPECT_EQ(slurp(p("k.json")), out.str());
  // 15 test rows cannot feed 20 centers.
  EXPECT_EQ(run({"estimate-k", "--data", p("d.jsonl"), "--checkpoint", p("ckpt.json"), "--setting", "open", "--seed",
                 "2", "--k-cap", "20"}),
            1);
}

TEST_F(Cli, EstimateKConstantFeaturesGivesOne) {
  small_pipeline("open");
  // Zero every backbone weight and bias: all rows share one feature vector.
  auto j = nlohmann::json::parse(slurp(p("ckpt.json")));
  ModelParams params = params_from_json(j);
  for (Layer& l : params.backbone) {
    l.weight = Matrix(l.weight.rows(), l.weight.cols());
    l.bias = Matrix(1, l.bias.cols(), 1.0);
  }
  std::ofstream(p("flat.json")) << params_to_json(params).dump();
  ASSERT_EQ(run({"estimate-k", "--data", p("d.jsonl"), "--checkpoint", p("flat.json"), "--setting", "open", "--seed",
                 "2", "--k-cap", "4"}),
            0)
      << err.str();
  EXPECT_EQ(nlohmann::json::parse(out.str())["k_pred"], 1);
}

TEST_F(Cli, ResumeMatchesUninterrupted) {
  small_pipeline();
  const std::vector<std::string> common = {"--data", p("d.jsonl"), "--hidden", "16", "--feature", "8", "--batch", "32",
                                           "--seed", "2", "--lr", "1e-3"};
  auto cmd = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  ASSERT_EQ(run(cmd({"train", "--epochs", "4", "--init", p("pre.json"), "--out", p("full.json")})), 0);
  ASSERT_EQ(run(cmd({"train", "--epochs", "2", "--init", p("pre.json"), "--out", p("half.json"), "--state-out", p("s.json")})), 0);
  ASSERT_EQ(run(cmd({"train", "--epochs", "4", "--resume", p("s.json"), "--out", p("resumed.json")})), 0) << err.str();
  EXPECT_EQ(slurp(p("full.json")), slurp(p("resumed.json")));
  EXPECT_EQ(run(cmd({"train", "--epochs", "4", "--resume", p("s.json"), "--init", p("pre.json"), "--out", p("x.json")})), 2);
}

}  // namespace
}  // namespace plpcl
