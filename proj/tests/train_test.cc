// Copyright 2026 The GPMSeg Authors.
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

#include "gpmseg/train.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "gpmseg/errors.h"
#include "testing/oracles.h"

namespace gpmseg {
namespace {

namespace fs = std::filesystem;
using testing::Gen;

// --- config ---------------------------------------------------------------

TEST(TrainConfigTest, DefaultsFollowReferenceProtocol) {
  TrainConfig c;
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.weight_decay, 5e-3);
  EXPECT_EQ(c.batch_size, 10);
  EXPECT_EQ(c.epochs, 350);
  EXPECT_EQ(c.t_max, 50);
  EXPECT_EQ(c.lr_min, 1e-5);
  EXPECT_EQ(c.image_size, 256);
  EXPECT_EQ(c.seeds.size(), 5u);
  EXPECT_NO_THROW(c.Validate());
}

TEST(TrainConfigTest, ParsesFlatTextWithComments) {
  std::istringstream in(
      "# tiny run\n"
      "lr = 0.002\n"
      "seeds=3, 4\n"
      "\n"
      "loss = dice   # trailing comment\n"
      "early_stop_patience = 7\n"
      "use_gpm = false\n"
      "ordering = top_to_bottom\n");
  const auto c = ParseConfig(in);
  EXPECT_EQ(c.lr, 0.002);
  EXPECT_EQ(c.seeds, (std::vector<uint64_t>{3, 4}));
  EXPECT_EQ(c.loss, LossKind::kDice);
  ASSERT_TRUE(c.early_stop_patience.has_value());
  EXPECT_EQ(*c.early_stop_patience, 7);
  EXPECT_FALSE(c.use_gpm);
  EXPECT_EQ(c.ordering, GpmOrdering::kTopToBottom);
}

TEST(TrainConfigTest, UnknownKeyAndBadValueNameTheKey) {
  TrainConfig c;
  try {
    ApplyOverride(c, "learning_rate=1");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "learning_rate");
  }
  try {
    ApplyOverride(c, "batch_size=ten");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "batch_size");
  }
  EXPECT_THROW(ApplyOverride(c, "no_equals_sign"), ConfigError);
}

TEST(TrainConfigTest, ValidateNamesOffendingKey) {
  auto key_of = [](TrainConfig c) {
    try {
      c.Validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  TrainConfig c;
  c.lr_min = c.lr;
  EXPECT_EQ(key_of(c), "lr_min");
  c = {};
  c.t_max = c.epochs + 1;
  EXPECT_EQ(key_of(c), "t_max");
  c = {};
  c.image_size = 100;
  EXPECT_EQ(key_of(c), "image_size");
  c = {};
  c.seeds.clear();
  EXPECT_EQ(key_of(c), "seeds");
  c = {};
  c.val_fraction = 1.0;
  EXPECT_EQ(key_of(c), "val_fraction");
}

TEST(TrainConfigTest, KeyValuesRoundTrip) {
  Gen gen(70);
  for (int trial = 0; trial < 20; ++trial) {
    TrainConfig c;
    c.lr = gen.Uniform(1e-5, 1e-1);
    c.lr_min = c.lr * gen.Uniform(0, 0.5);
    c.batch_size = gen.Int(1, 32);
    c.seeds = {static_cast<uint64_t>(gen.Int(0, 100)),
               static_cast<uint64_t>(gen.Int(0, 100))};
    c.loss = gen.Pick<LossKind>({LossKind::kDiceBce, LossKind::kDice, LossKind::kBce});
    if (gen.Coin(0.5)) c.early_stop_patience = gen.Int(1, 30);
    c.similarity_scaling =
        gen.Pick<SimilarityScaling>({SimilarityScaling::kChannels, SimilarityScaling::kTokens});
    c.train_manifest = "data/m" + std::to_string(trial) + ".tsv";
    c.val_fraction = gen.Uniform(0, 0.9);
    TrainConfig back;
    for (const auto& [k, v] : ToKeyValues(c)) SetValue(back, k, v);
    EXPECT_EQ(ToKeyValues(back), ToKeyValues(c));
    EXPECT_EQ(back.lr, c.lr);
    EXPECT_EQ(back.lr_min, c.lr_min);
    EXPECT_EQ(back.val_fraction, c.val_fraction);
    EXPECT_EQ(back.early_stop_patience, c.early_stop_patience);
  }
}

// --- schedule ---------------------------------------------------------------

TEST(CosineLrTest, ClosedFormMatchesRecurrence) {
  for (int64_t e : {0, 10, 25, 50, 75, 100, 149}) {
    EXPECT_NEAR(CosineLr(1e-3, 1e-5, 50, e),
                testing::CosineAnnealing(1e-3, 1e-5, 50, e), 1e-9)
        << "epoch " << e;
  }
  EXPECT_EQ(CosineLr(1e-3, 1e-5, 50, 0), 1e-3);
  EXPECT_NEAR(CosineLr(1e-3, 1e-5, 50, 50), 1e-5, 1e-18);
  EXPECT_NEAR(CosineLr(1e-3, 1e-5, 50, 25), (1e-3 + 1e-5) / 2, 1e-15);
}

TEST(CosineLrTest, StaysWithinBoundsAndIsPeriodic) {
  for (int64_t e = 0; e < 350; ++e) {
    const double lr = CosineLr(1e-3, 1e-5, 50, e);
    EXPECT_GE(lr, 1e-5 - 1e-18);
    EXPECT_LE(lr, 1e-3);
    EXPECT_NEAR(lr, CosineLr(1e-3, 1e-5, 50, e + 100), 1e-15);
  }
}

// --- loss -------------------------------------------------------------------

TEST(SegLossTest, NonNegativeAndNearZeroWhenPerfect) {
  Gen gen(71);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = gen.Tensor({2, 1, 6, 6}, -5, 5);
    auto target = gen.BinaryMask({2, 1, 6, 6}, 0.4).to(torch::kFloat32);
    for (auto kind : {LossKind::kDiceBce, LossKind::kDice, LossKind::kBce}) {
      EXPECT_GE(SegLoss(logits, target, kind).item<double>(), 0.0);
    }
  }
  auto target = torch::zeros({1, 1, 8, 8});
  target.slice(2, 0, 4).fill_(1);
  auto perfect = (target * 2 - 1) * 30;
  EXPECT_LT(SegLoss(perfect, target).item<double>(), 1e-3);
}

TEST(SegLossTest, DiceMatchesHandComputation) {
  auto logits = torch::tensor({0.0, 0.0, 0.0, 0.0}).reshape({1, 1, 2, 2});
  auto target = torch::tensor({1.0, 1.0, 0.0, 0.0}).reshape({1, 1, 2, 2});
  // p = 0.5 everywhere: 1 - (2 * 1 + 1) / (2 + 2 + 1).
  EXPECT_NEAR(SoftDiceLoss(logits, target).item<double>(), 1 - 3.0 / 5.0, 1e-7);
  EXPECT_NEAR(SegLoss(logits, target, LossKind::kBce).item<double>(),
              std::log(2.0), 1e-7);
}

TEST(SegLossTest, GradientMatchesFiniteDifferences) {
  Gen gen(72);
  auto target = gen.BinaryMask({1, 1, 2, 2}, 0.5);
  for (auto kind : {LossKind::kDiceBce, LossKind::kDice, LossKind::kBce}) {
    auto r = testing::CheckGradient(
        [&](const torch::Tensor& x) { return SegLoss(x, target, kind); },
        gen.Tensor({1, 1, 2, 2}, -2, 2, torch::kFloat64));
    EXPECT_LT(r.max_rel_error, 1e-5) << ToString(kind);
    EXPECT_EQ(r.checked, 4);
  }
}

TEST(SegLossTest, ShapeMismatchThrows) {
  EXPECT_THROW(SegLoss(torch::zeros({1, 1, 4, 4}), torch::zeros({1, 1, 4, 5})),
               InvalidInputError);
}

// --- augmentation -------------------------------------------------------------

// Image, depth and mask all derived from the same pixel coordinates, so any
// misaligned geometric op shows up as a mismatch between them.
Sample CoordinateSample(int64_t h, int64_t w) {
  auto idx = torch::arange(h * w, torch::kFloat32).reshape({1, h, w}) / (h * w);
  Sample s;
  s.id = "coords";
  s.image = torch::cat({idx, idx, idx});
  s.depth = idx.clone();
  s.mask = (idx > 0.5).to(torch::kFloat32);
  return s;
}

TEST(AugmentTest, GeometryStaysAlignedAndMaskBinary) {
  std::mt19937_64 rng(73);
  const AugmentOptions geometric{.brightness = 0.0, .contrast = 0.0};
  for (int trial = 0; trial < 50; ++trial) {
    auto s = CoordinateSample(6, 6);
    auto a = Augment(s, rng, geometric);
    EXPECT_TRUE(torch::equal(a.image[0], a.depth[0]));
    EXPECT_TRUE(torch::equal(a.mask, (a.depth > 0.5).to(torch::kFloat32)));
    EXPECT_TRUE(((a.mask == 0) | (a.mask == 1)).all().item<bool>());
  }
}

TEST(AugmentTest, FlipsAreInvolutionsAndQuarterTurnsCompose) {
  auto s = CoordinateSample(5, 7);
  for (bool h : {false, true}) {
    for (bool v : {false, true}) {
      AugmentDraw d{.hflip = h, .vflip = v};
      auto twice = ApplyAugment(ApplyAugment(s, d), d);
      EXPECT_TRUE(torch::equal(twice.image, s.image));
      EXPECT_TRUE(torch::equal(twice.mask, s.mask));
    }
  }
  for (int k = 0; k < 4; ++k) {
    auto back = ApplyAugment(ApplyAugment(s, {.rot90 = k}), {.rot90 = 4 - k});
    EXPECT_TRUE(torch::equal(back.depth, s.depth));
  }
  EXPECT_EQ(ApplyAugment(s, {.rot90 = 1}).image.sizes(),
            (std::vector<int64_t>{3, 7, 5}));
}

TEST(AugmentTest, PhotometricJitterTouchesImageOnly) {
  auto s = CoordinateSample(4, 4);
  auto a = ApplyAugment(s, {.brightness = 0.05, .contrast = 1.1});
  EXPECT_FALSE(torch::equal(a.image, s.image));
  EXPECT_TRUE(torch::equal(a.depth, s.depth));
  EXPECT_TRUE(torch::equal(a.mask, s.mask));
  EXPECT_GE(a.image.min().item<double>(), 0.0);
  EXPECT_LE(a.image.max().item<double>(), 1.0);
}

// --- data ---------------------------------------------------------------------

class DatasetFileTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gpmseg_data_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

TEST_F(DatasetFileTest, WriteThenLoadRoundTrips) {
  const auto data = MakeSyntheticDataset(3, 32, 5);
  const auto manifest = WriteDataset(data, dir_);
  const auto entries = ReadManifest(manifest, {});
  ASSERT_EQ(entries.size(), 3u);
  const auto loaded = LoadDataset(entries, 32);
  for (size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(loaded[i].id, data[i].id);
    // 8-bit image quantization and 16-bit depth quantization.
    EXPECT_LE((loaded[i].image - data[i].image).abs().max().item<double>(),
              0.5 / 255 + 1e-6);
    EXPECT_LE((loaded[i].depth - data[i].depth).abs().max().item<double>(),
              2.0 / 65535);
    EXPECT_TRUE(torch::equal(loaded[i].mask, data[i].mask));
  }
}

TEST_F(DatasetFileTest, MissingFileNamesIt) {
  const auto manifest = WriteDataset(MakeSyntheticDataset(2, 16, 6), dir_);
  const auto entries = ReadManifest(manifest, {});
  fs::remove(entries[1].mask);
  try {
    LoadDataset(entries, 16);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(entries[1].mask.filename().string()),
              std::string::npos);
  }
}

TEST_F(DatasetFileTest, MalformedManifestLineReportsLineNumber) {
  std::ofstream(dir_ / "m.tsv") << "# header\na.png\tb.png\tc.png\nonly_two\tcols\n";
  try {
    ReadManifest(dir_ / "m.tsv", {});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST_F(DatasetFileTest, RelativePathsResolveAgainstDataRoot) {
  std::ofstream(dir_ / "m.tsv") << "img/a.png\tdep/a.png\tmsk/a.png\n";
  auto by_dir = ReadManifest(dir_ / "m.tsv", {});
  EXPECT_EQ(by_dir[0].image, dir_ / "img/a.png");
  auto by_root = ReadManifest(dir_ / "m.tsv", "/data");
  EXPECT_EQ(by_root[0].mask, fs::path("/data/msk/a.png"));
}

TEST(DatasetTest, SyntheticIsDeterministicAndWellFormed) {
  const auto a = MakeSyntheticDataset(4, 32, 9);
  const auto b = MakeSyntheticDataset(4, 32, 9);
  ASSERT_EQ(a.size(), 4u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(torch::equal(a[i].image, b[i].image));
    EXPECT_EQ(a[i].image.sizes(), (std::vector<int64_t>{3, 32, 32}));
    EXPECT_TRUE(((a[i].mask == 0) | (a[i].mask == 1)).all().item<bool>());
    EXPECT_GT(a[i].mask.sum().item<double>(), 0.0);
    EXPECT_GE(a[i].depth.min().item<double>(), 0.0);
    EXPECT_LE(a[i].depth.max().item<double>(), 1.0);
  }
}

TEST(DatasetTest, SplitIsDeterministicAndPartitions) {
  const auto data = MakeSyntheticDataset(40, 16, 10);
  const auto [train, val] = SplitByIdHash(data, 0.25);
  const auto [train2, val2] = SplitByIdHash(data, 0.25);
  EXPECT_EQ(train.size() + val.size(), data.size());
  ASSERT_EQ(val.size(), val2.size());
  for (size_t i = 0; i < val.size(); ++i) EXPECT_EQ(val[i].id, val2[i].id);
  EXPECT_TRUE(SplitByIdHash(data, 0.0).second.empty());
}

// --- training -------------------------------------------------------------------

TrainConfig TinyTrainConfig() {
  TrainConfig c;
  c.base_channels = 4;
  c.image_size = 32;
  c.epochs = 3;
  c.t_max = 3;
  c.batch_size = 2;
  c.seeds = {0};
  return c;
}

TEST(TrainRunTest, SameSeedIsBitwiseReproducible) {
  const auto config = TinyTrainConfig();
  const auto data = MakeSyntheticDataset(6, 32, 12);
  const auto [train, val] = SplitByIdHash(data, 0.3);
  auto run = [&] {
    auto model = MakeModel(config.model_config(), 3);
    return TrainRun(config, model, train, val, 3);
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.state.history.size(), b.state.history.size());
  for (size_t i = 0; i < a.state.history.size(); ++i) {
    EXPECT_EQ(a.state.history[i].train_loss, b.state.history[i].train_loss);
  }
  EXPECT_EQ(CheckpointDigest(a.checkpoint), CheckpointDigest(b.checkpoint));
}

TEST(TrainRunTest, BestValidationIsMonotoneAndLogged) {
  auto config = TinyTrainConfig();
  config.epochs = 5;
  const auto data = MakeSyntheticDataset(8, 32, 13);
  const auto [train, val] = SplitByIdHash(data, 0.4);
  ASSERT_FALSE(val.empty());
  auto model = MakeModel(config.model_config(), 0);
  std::ostringstream log;
  const auto r = TrainRun(config, model, train, val, 0, {.log = &log});
  for (size_t i = 1; i < r.state.checkpoint_dscs.size(); ++i) {
    EXPECT_GT(r.state.checkpoint_dscs[i], r.state.checkpoint_dscs[i - 1]);
  }
  EXPECT_EQ(r.state.checkpoint_dscs.back(), r.state.best_val_dsc);
  EXPECT_EQ(r.checkpoint.manifest.at("best_epoch"), r.state.best_epoch);
  EXPECT_EQ(r.state.history.size(), 5u);
  const auto text = log.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  for (size_t e = 0; e < r.state.history.size(); ++e) {
    EXPECT_EQ(r.state.history[e].lr, CosineLr(config, static_cast<int64_t>(e)));
  }
}

TEST(TrainRunTest, EarlyStopAfterPatience) {
  auto config = TinyTrainConfig();
  config.epochs = 30;
  config.t_max = 30;
  config.lr = 1e-9;  // effectively frozen: val DSC cannot improve
  config.lr_min = 0;
  config.early_stop_patience = 2;
  const auto data = MakeSyntheticDataset(6, 32, 14);
  const auto [train, val] = SplitByIdHash(data, 0.4);
  auto model = MakeModel(config.model_config(), 0);
  const auto r = TrainRun(config, model, train, val, 0);
  EXPECT_LT(r.state.epoch, 30);
  EXPECT_EQ(r.checkpoint.manifest.at("epochs_run"), r.state.epoch);
}

TEST(TrainRunTest, NonFiniteLossRaises) {
  auto config = TinyTrainConfig();
  auto data = MakeSyntheticDataset(2, 32, 15);
  data[0].image[0][3][3] = NAN;
  data[1].image[0][3][3] = NAN;
  auto model = MakeModel(config.model_config(), 0);
  try {
    TrainRun(config, model, data, {}, 0);
    FAIL() << "expected TrainingDivergedError";
  } catch (const TrainingDivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(EvaluateTest, MatchesScoringEachImage) {
  auto config = TinyTrainConfig();
  config.use_gpm = false;
  auto model = MakeModel(config.model_config(), 4);
  const auto data = MakeSyntheticDataset(5, 32, 16);
  const auto scores = Evaluate(model, data, 2);
  ASSERT_EQ(scores.per_image.size(), 5u);
  model->eval();
  torch::NoGradGuard no_grad;
  double sum = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    auto pred = Binarize(model->forward(data[i].image.unsqueeze(0)))[0];
    const auto d = ComputeDiceIou(pred, data[i].mask);
    EXPECT_NEAR(scores.per_image[i].dsc, d.dsc, 1e-12);
    sum += d.dsc;
  }
  EXPECT_NEAR(scores.dsc, sum / 5, 1e-12);
}

}  // namespace
}  // namespace gpmseg
