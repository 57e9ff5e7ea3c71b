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

#include <cmath>
#include <cstdlib>

#include "plpcl/pipeline.hpp"
#include "test_util.hpp"

namespace plpcl {
namespace {

using namespace plpcl::testing;

// Small enough that a handful of epochs take milliseconds.
EmbeddingDataset tiny(Setting setting, double labeled_ratio = 1.0, std::uint64_t seed = 4) {
  return apply_split(synth_mixture(5, 8, 20, 6.0, 1.0, seed), {0.4, labeled_ratio, setting, seed});
}

TrainConfig tiny_config(Setting setting) {
  TrainConfig cfg;
  cfg.setting = setting;
  cfg.epochs_pretrain = 3;
  cfg.epochs_train = 3;
  cfg.batch_size = 16;
  cfg.hidden = 12;
  cfg.feature = 6;
  cfg.pretrain_lr = 1e-3;
  cfg.train_lr = 1e-3;
  cfg.seed = 7;
  return cfg;
}

std::vector<EpochLog> run_train(const EmbeddingDataset& data, const ModelParams& start, const TrainConfig& cfg,
                                ModelParams* out = nullptr) {
  std::vector<EpochLog> logs;
  ModelParams p = train(data, start, cfg, [&](const EpochLog& l) { logs.push_back(l); });
  if (out) *out = std::move(p);
  return logs;
}

double part(const EpochLog& l, LossTerm t) { return l.parts[static_cast<std::size_t>(t)]; }

// ---- pretrain -----------------------------------------------------------------

TEST(Pretrain, Deterministic) {
  const auto data = tiny(Setting::Ood);
  const auto cfg = tiny_config(Setting::Ood);
  EXPECT_EQ(params_to_json(pretrain(data, cfg)).dump(), params_to_json(pretrain(data, cfg)).dump());
}

TEST(Pretrain, HeadSpansKnownAndNovel) {
  const auto data = tiny(Setting::Ood);
  const ModelParams p = pretrain(data, tiny_config(Setting::Ood));
  EXPECT_EQ(p.dims.clusters, 5u);
  ASSERT_EQ(p.lineage.size(), 2u);
  EXPECT_EQ(p.lineage[0].stage, "init");
  EXPECT_EQ(p.lineage[1].stage, "pretrain");
}

TEST(Pretrain, SeparableTwoClassDrivesCeDown) {
  const auto data = apply_split(synth_mixture(2, 8, 100, 10.0, 1.0, 3), {0.0, 1.0, Setting::Open, 3});
  TrainConfig cfg = tiny_config(Setting::Open);
  cfg.epochs_pretrain = 50;
  cfg.batch_size = 32;
  double last_ce = 1e9;
  pretrain(data, cfg, [&](const EpochLog& l) { last_ce = part(l, LossTerm::Ce); });
  EXPECT_LT(last_ce, 0.1);
}

TEST(Pretrain, Errors) {
  EXPECT_EQ(error_code_of([] { pretrain(tiny(Setting::Open, 0.0), tiny_config(Setting::Open)); }),
            ErrorCode::NoLabeledData);
  TrainConfig cfg = tiny_config(Setting::Ood);
  cfg.k_ind = 4;
  EXPECT_EQ(error_code_of([&] { pretrain(tiny(Setting::Ood), cfg); }), ErrorCode::ClassCountMismatch);
  cfg = tiny_config(Setting::Ood);
  cfg.batch_size = 1;
  EXPECT_EQ(error_code_of([&] { pretrain(tiny(Setting::Ood), cfg); }), ErrorCode::InvalidConfig);
  cfg = tiny_config(Setting::Ood);
  cfg.sigma = 1.01;
  EXPECT_EQ(error_code_of([&] { pretrain(tiny(Setting::Ood), cfg); }), ErrorCode::InvalidConfig);
}

TEST(Pretrain, OodNeedsNovelClasses) {
  const auto data = apply_split(synth_mixture(3, 4, 10, 6.0, 1.0, 1), {0.0, 1.0, Setting::Open, 1});
  EXPECT_EQ(error_code_of([&] { pretrain(data, tiny_config(Setting::Ood)); }), ErrorCode::NoClasses);
}

// ---- train --------------------------------------------------------------------

class TrainFixture : public ::testing::TestWithParam<Setting> {
 protected:
  void SetUp() override {
    data = tiny(GetParam(), 0.5);
    cfg = tiny_config(GetParam());
    start = pretrain(data, cfg);
  }
  EmbeddingDataset data;
  TrainConfig cfg;
  ModelParams start;
};

TEST_P(TrainFixture, ZeroEpochsIsIdentity) {
  cfg.epochs_train = 0;
  EXPECT_EQ(train(data, start, cfg), start);
}

TEST_P(TrainFixture, Deterministic) {
  ModelParams a, b;
  const auto la = run_train(data, start, cfg, &a);
  const auto lb = run_train(data, start, cfg, &b);
  EXPECT_EQ(params_to_json(a).dump(), params_to_json(b).dump());
  ASSERT_EQ(la.size(), 3u);
  for (std::size_t e = 0; e < la.size(); ++e) EXPECT_EQ(la[e].to_json().dump(), lb[e].to_json().dump());
  EXPECT_NE(a, start);
}

TEST_P(TrainFixture, ThreadCountDoesNotMatter) {
  ModelParams a, b;
  ::setenv("PLPCL_THREADS", "1", 1);
  run_train(data, start, cfg, &a);
  ::setenv("PLPCL_THREADS", "3", 1);
  run_train(data, start, cfg, &b);
  ::unsetenv("PLPCL_THREADS");
  EXPECT_EQ(a, b);
}

TEST_P(TrainFixture, AllZeroWeightsLeaveParamsUnchanged) {
  cfg.loss.weights = {0, 0, 0, 0, 0};
  ModelParams out;
  const auto logs = run_train(data, start, cfg, &out);
  out.lineage = start.lineage;
  EXPECT_EQ(out, start);
  for (const auto& l : logs) EXPECT_EQ(l.loss_total, 0.0);
}

TEST_P(TrainFixture, ResumeIsBitExact) {
  cfg.epochs_train = 4;
  TrainState full = start_training(start);
  continue_training(full, data, cfg);

  TrainConfig half = cfg;
  half.epochs_train = 2;
  TrainState first = start_training(start);
  continue_training(first, data, half);
  TrainState resumed = train_state_from_json(nlohmann::json::parse(train_state_to_json(first).dump()));
  continue_training(resumed, data, cfg);

  EXPECT_EQ(resumed.epoch, 4u);
  EXPECT_EQ(train_state_to_json(resumed).dump(), train_state_to_json(full).dump());
}

TEST_P(TrainFixture, HeldOutLabelsNeverRead) {
  // Scrambling dev/test labels must not change anything training does.
  EmbeddingDataset scrambled = data;
  for (Record& r : scrambled.records)
    if (r.split != Split::Train && r.label) r.label = scrambled.classes[(*scrambled.class_index(*r.label) + 1) % 5];
  ModelParams a, b;
  run_train(data, start, cfg, &a);
  run_train(scrambled, start, cfg, &b);
  EXPECT_EQ(a, b);
}

TEST_P(TrainFixture, SigmaOneNoPclHasNoPseudoLabelOrPrototypeTerm) {
  cfg.sigma = 1.0;
  cfg.loss.weight(LossTerm::Pcl) = 0.0;
  for (const auto& l : run_train(data, start, cfg)) {
    EXPECT_EQ(l.n_reliable, 0u);
    EXPECT_EQ(part(l, LossTerm::Pcl), 0.0);
  }
}

TEST_P(TrainFixture, DimsMismatch) {
  const auto other = apply_split(synth_mixture(5, 6, 20, 6.0, 1.0, 4), {0.4, 0.5, GetParam(), 4});
  EXPECT_EQ(error_code_of([&] { train(other, start, cfg); }), ErrorCode::DimsMismatch);
}

TEST_P(TrainFixture, LogFields) {
  const auto logs = run_train(data, start, cfg);
  ASSERT_EQ(logs.size(), 3u);
  const auto j = logs[2].to_json();
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"epoch", "loss_total", "loss_scl", "loss_ce", "loss_ilcl", "loss_clcl",
                                            "loss_pcl", "n_reliable"}));
  EXPECT_EQ(j["epoch"], 2);
  EXPECT_NEAR(logs[2].loss_total,
              part(logs[2], LossTerm::Scl) + part(logs[2], LossTerm::Ce) + part(logs[2], LossTerm::Ilcl) +
                  part(logs[2], LossTerm::Clcl) + part(logs[2], LossTerm::Pcl),
              1e-9);
}

INSTANTIATE_TEST_SUITE_P(Settings, TrainFixture, ::testing::Values(Setting::Ood, Setting::Open),
                         [](const auto& info) { return std::string(setting_name(info.param)); });

TEST(TrainState, MalformedJsonRejected) {
  EXPECT_EQ(error_code_of([] { train_state_from_json(nlohmann::json::object()); }), ErrorCode::ParseError);
  nlohmann::json j = train_state_to_json(start_training(init_params({4, 5, 3, 3, 0}, 1)));
  j["adam"]["m"].erase(0);
  EXPECT_EQ(error_code_of([&] { train_state_from_json(j); }), ErrorCode::ParseError);
}

// ---- predict ------------------------------------------------------------------

// A model whose cluster head ignores the input and emits softmax(logits).
ModelParams constant_head(const std::vector<double>& logits) {
  ModelParams p = init_params({3, 4, 2, logits.size(), 0}, 1);
  p.head_g.back().weight = Matrix(p.head_g.back().weight.rows(), logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) p.head_g.back().bias(0, c) = logits[c];
  return p;
}

TEST(Predict, OneHotOpen) {
  const ModelParams p = constant_head({0, 0, 0, 30});
  EXPECT_EQ(predict(p, Matrix(2, 3, 0.5), Setting::Open, 2), (std::vector<std::size_t>{3, 3}));
}

TEST(Predict, OodRestrictsToNovelColumns) {
  const ModelParams p = constant_head({std::log(0.4), std::log(0.3), std::log(0.2), std::log(0.1)});
  EXPECT_EQ(predict(p, Matrix(1, 3, 1.0), Setting::Ood, 2), (std::vector<std::size_t>{2}));
  EXPECT_EQ(predict(p, Matrix(1, 3, 1.0), Setting::Open, 2), (std::vector<std::size_t>{0}));
}

TEST(Predict, TiesGoToLowerColumn) {
  EXPECT_EQ(predict(constant_head({0, 2, 2, 1}), Matrix(1, 3, 1.0), Setting::Open, 2), (std::vector<std::size_t>{1}));
}

TEST(Predict, DimsMismatch) {
  EXPECT_EQ(error_code_of([] { predict(constant_head({0, 1}), Matrix(1, 4), Setting::Open, 1); }),
            ErrorCode::DimsMismatch);
}

TEST(Layout, SettingColumns) {
  EXPECT_EQ(setting_columns(Setting::Ood, 2, 4), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(setting_columns(Setting::Open, 2, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
}

}  // namespace
}  // namespace plpcl
