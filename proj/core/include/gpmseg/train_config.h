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

#ifndef GPMSEG_TRAIN_CONFIG_H_
#define GPMSEG_TRAIN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gpmseg/backbone.h"

namespace gpmseg {

enum class LossKind { kDiceBce, kDice, kBce };

std::string_view ToString(LossKind kind);
LossKind ParseLossKind(std::string_view text);

// Everything a training run needs. Defaults reproduce the reference
// protocol: AdamW, lr 1e-3, weight decay 5e-3, batch 10, 350 epochs, cosine
// annealing with T_max 50 down to 1e-5, 256x256 inputs, five seeds.
struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 5e-3;
  int64_t batch_size = 10;
  int64_t epochs = 350;
  int64_t t_max = 50;
  double lr_min = 1e-5;
  int64_t image_size = 256;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
  LossKind loss = LossKind::kDiceBce;
  std::optional<int64_t> early_stop_patience;

  // Model.
  int64_t base_channels = 64;
  bool use_gpm = true;
  GpmOrdering ordering = GpmOrdering::kBottomToTop;
  SimilarityScaling similarity_scaling = SimilarityScaling::kChannels;

  // Data. A non-empty train_manifest wins over synthetic data.
  std::string train_manifest;
  std::string val_manifest;
  int64_t synthetic_samples = 0;
  uint64_t synthetic_seed = 0;
  double val_fraction = 0.1;
  bool augment = true;

  // Execution.
  int64_t threads = 1;
  std::string output_dir = "runs";

  ModelConfig model_config() const;

  // Throws ConfigError naming the offending key.
  void Validate() const;
};

// Applies one "key=value" (or "key = value") assignment. Unknown keys and
// unparsable values raise ConfigError carrying the key name.
void ApplyOverride(TrainConfig& config, std::string_view assignment);
void SetValue(TrainConfig& config, const std::string& key,
              const std::string& value);

// Parses flat "key = value" text; '#' starts a comment.
TrainConfig ParseConfig(std::istream& in);
TrainConfig LoadConfig(const std::filesystem::path& path);

// Every key with its canonical string value; feeding the pairs back through
// SetValue reproduces the config.
std::map<std::string, std::string> ToKeyValues(const TrainConfig& config);

}  // namespace gpmseg

#endif  // GPMSEG_TRAIN_CONFIG_H_
