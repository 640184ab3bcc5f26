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

#ifndef GPMSEG_TRAIN_H_
#define GPMSEG_TRAIN_H_

#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "gpmseg/backbone.h"
#include "gpmseg/checkpoint.h"
#include "gpmseg/dataset.h"
#include "gpmseg/metrics.h"
#include "gpmseg/train_config.h"

namespace gpmseg {

// Soft-Dice smoothing term.
inline constexpr double kDiceSmooth = 1.0;

// Mean over images of 1 - (2 sum(p g) + 1) / (sum p + sum g + 1) with
// p = sigmoid(logits). Inputs are (B, ...).
torch::Tensor SoftDiceLoss(const torch::Tensor& logits,
                           const torch::Tensor& target);

// BCE-with-logits + soft Dice by default. Throws InvalidInputError when the
// shapes differ.
torch::Tensor SegLoss(const torch::Tensor& logits, const torch::Tensor& target,
                      LossKind kind = LossKind::kDiceBce);

// Cosine annealing in closed form, periodic in 2 * t_max:
//   lr_min + (lr - lr_min) * (1 + cos(pi * epoch / t_max)) / 2.
double CosineLr(double lr, double lr_min, int64_t t_max, int64_t epoch);

inline double CosineLr(const TrainConfig& config, int64_t epoch) {
  return CosineLr(config.lr, config.lr_min, config.t_max, epoch);
}

struct EpochRecord {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dsc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
  int64_t epoch = 0;  // epochs completed
  uint64_t seed = 0;
  double best_val_dsc = -1.0;
  int64_t best_epoch = -1;
  std::vector<EpochRecord> history;
  // Values of best_val_dsc at each improvement, in order.
  std::vector<double> checkpoint_dscs;
};

struct TrainResult {
  TrainState state;
  // Best-validation snapshot, or the final weights when val is empty.
  Checkpoint checkpoint;
};

struct TrainHooks {
  std::ostream* log = nullptr;  // receives "epoch,lr,train_loss,val_dsc"
  AugmentOptions augment;
};

// Seeds torch and the data-order/augmentation generator from seed, then runs
// config.epochs epochs of AdamW with the cosine schedule. Stops early when
// config.early_stop_patience epochs pass without a val-DSC improvement.
// Throws TrainingDivergedError on a non-finite loss.
TrainResult TrainRun(const TrainConfig& config, SegmentationNet& model,
                     const Dataset& train, const Dataset& val, uint64_t seed,
                     const TrainHooks& hooks = {});

// Per-image DSC/IoU of the binarized prediction, batched.
SegScores Evaluate(SegmentationNet& model, const Dataset& data,
                   int64_t batch_size = 8);

// Builds the checkpoint manifest for a model trained under config.
nlohmann::json CheckpointManifest(const TrainConfig& config,
                                  const ModelConfig& model, uint64_t seed,
                                  const TrainState& state);

// Recreates the model described by a checkpoint manifest and loads weights.
SegmentationNet ModelFromCheckpoint(const Checkpoint& checkpoint);

}  // namespace gpmseg

#endif  // GPMSEG_TRAIN_H_
