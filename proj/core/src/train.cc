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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

// Keeps the data-order stream distinct from torch's generator seeded with the
// same value.
constexpr uint64_t kDataStreamSalt = 0x5851F42D4C957F2DULL;

void CheckSameShape(const torch::Tensor& logits, const torch::Tensor& target) {
  if (!logits.defined() || !target.defined() ||
      logits.sizes() != target.sizes()) {
    throw InvalidInputError("seg_loss: logits and target shapes differ");
  }
  if (logits.dim() < 1) {
    throw InvalidInputError("seg_loss: expected a leading batch dimension");
  }
}

}  // namespace

torch::Tensor SoftDiceLoss(const torch::Tensor& logits,
                           const torch::Tensor& target) {
  CheckSameShape(logits, target);
  const auto batch = logits.size(0);
  auto p = torch::sigmoid(logits).reshape({batch, -1});
  auto g = target.to(logits.scalar_type()).reshape({batch, -1});
  auto dice = (2.0 * (p * g).sum(1) + kDiceSmooth) /
              (p.sum(1) + g.sum(1) + kDiceSmooth);
  return 1.0 - dice.mean();
}

torch::Tensor SegLoss(const torch::Tensor& logits, const torch::Tensor& target,
                      LossKind kind) {
  CheckSameShape(logits, target);
  auto t = target.to(logits.scalar_type());
  switch (kind) {
    case LossKind::kBce:
      return torch::binary_cross_entropy_with_logits(logits, t);
    case LossKind::kDice:
      return SoftDiceLoss(logits, t);
    case LossKind::kDiceBce:
      break;
  }
  return torch::binary_cross_entropy_with_logits(logits, t) +
         SoftDiceLoss(logits, t);
}

double CosineLr(double lr, double lr_min, int64_t t_max, int64_t epoch) {
  if (t_max <= 0) throw InvalidInputError("cosine schedule needs t_max > 0");
  const double phase = std::numbers::pi * static_cast<double>(epoch) /
                       static_cast<double>(t_max);
  return lr_min + (lr - lr_min) * (1.0 + std::cos(phase)) / 2.0;
}

SegScores Evaluate(SegmentationNet& model, const Dataset& data,
                   int64_t batch_size) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  std::vector<ImageScore> scores;
  scores.reserve(data.size());
  for (size_t start = 0; start < data.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(data.size(), start + static_cast<size_t>(batch_size));
    std::vector<const Sample*> items;
    for (size_t i = start; i < end; ++i) items.push_back(&data[i]);
    auto batch = Collate(items);
    auto logits = model->has_gpm() ? model->forward(batch.image, batch.depth)
                                   : model->forward(batch.image);
    auto pred = Binarize(logits);
    for (size_t i = start; i < end; ++i) {
      const auto k = static_cast<int64_t>(i - start);
      const auto s = ComputeDiceIou(pred[k], batch.mask[k]);
      scores.push_back({data[i].id, s.dsc, s.iou});
    }
  }
  model->train(was_training);
  return Summarize(std::move(scores));
}

nlohmann::json CheckpointManifest(const TrainConfig& config,
                                  const ModelConfig& model, uint64_t seed,
                                  const TrainState& state) {
  nlohmann::json j;
  j["model"] = model;
  auto train = ToKeyValues(config);
  // Where a run writes is not part of what it trained; leaving it out keeps
  // checkpoints of identical runs byte-identical across output locations.
  train.erase("output_dir");
  j["train"] = train;
  j["seed"] = seed;
  j["epoch"] = state.epoch;
  j["best_epoch"] = state.best_epoch;
  j["val_dsc"] = state.best_val_dsc;
  return j;
}

SegmentationNet ModelFromCheckpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.manifest.contains("model")) {
    throw CheckpointError("checkpoint manifest has no model section");
  }
  ModelConfig config;
  try {
    config = checkpoint.manifest.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model section: ") + e.what());
  } catch (const InvalidInputError& e) {
    throw CheckpointError(std::string("bad model section: ") + e.what());
  }
  SegmentationNet model(config);
  Restore(*model, checkpoint);
  return model;
}

TrainResult TrainRun(const TrainConfig& config, SegmentationNet& model,
                     const Dataset& train, const Dataset& val, uint64_t seed,
                     const TrainHooks& hooks) {
  config.Validate();
  if (train.empty()) throw InvalidInputError("train_run: empty dataset");

  torch::manual_seed(seed);
  std::mt19937_64 rng(seed ^ kDataStreamSalt);
  torch::optim::AdamW optimizer(
      model->parameters(),
      torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));

  TrainResult result;
  TrainState& state = result.state;
  state.seed = seed;
  const ModelConfig model_config = model->config();
  int64_t stale_epochs = 0;

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = CosineLr(config, epoch);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
    model->train();
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<Sample> augmented;
      augmented.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const Sample& s = train[order[i]];
        augmented.push_back(config.augment ? Augment(s, rng, hooks.augment)
                                           : s);
      }
      std::vector<const Sample*> items;
      for (const auto& s : augmented) items.push_back(&s);
      auto batch = Collate(items);

      auto logits = model->has_gpm() ? model->forward(batch.image, batch.depth)
                                     : model->forward(batch.image);
      auto loss = SegLoss(logits, batch.mask, config.loss);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", lr " << lr
            << ", batch " << batches;
        throw TrainingDivergedError(msg.str());
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }

    EpochRecord record{epoch, lr, loss_sum / static_cast<double>(batches)};
    state.epoch = epoch + 1;
    if (!val.empty()) {
      record.val_dsc = Evaluate(model, val).dsc;
      if (record.val_dsc > state.best_val_dsc) {
        state.best_val_dsc = record.val_dsc;
        state.best_epoch = epoch;
        state.checkpoint_dscs.push_back(record.val_dsc);
        result.checkpoint = Snapshot(
            *model, CheckpointManifest(config, model_config, seed, state));
        stale_epochs = 0;
      } else {
        ++stale_epochs;
      }
    }
    state.history.push_back(record);
    if (hooks.log) {
      *hooks.log << record.epoch << ',' << record.lr << ','
                 << record.train_loss << ',' << record.val_dsc << '\n';
    }
    if (config.early_stop_patience && stale_epochs >= *config.early_stop_patience) {
      break;
    }
  }

  if (val.empty()) {
    result.checkpoint =
        Snapshot(*model, CheckpointManifest(config, model_config, seed, state));
  } else {
    // The stored manifest was written at save time; record the final epoch.
    result.checkpoint.manifest["epochs_run"] = state.epoch;
  }
  return result;
}

}  // namespace gpmseg
