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

#ifndef GPMSEG_METRICS_H_
#define GPMSEG_METRICS_H_

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gpmseg {

// sigmoid(logit) > threshold, as a uint8 {0, 1} tensor of the same shape.
// The comparison is strict, so a zero logit is background at 0.5.
torch::Tensor Binarize(const torch::Tensor& logits, double threshold = 0.5);

struct DiceIou {
  double dsc = 0.0;
  double iou = 0.0;
};

// Overlap of two binary masks of equal shape. Two empty masks score (1, 1).
// Throws InvalidInputError for shape mismatch or values outside {0, 1}.
DiceIou ComputeDiceIou(const torch::Tensor& pred_mask,
                       const torch::Tensor& gt_mask);

struct ImageScore {
  std::string image_id;
  double dsc = 0.0;
  double iou = 0.0;
};

// Dataset-level scores are means of per-image scores, not pooled pixels.
struct SegScores {
  double dsc = 0.0;
  double iou = 0.0;
  std::vector<ImageScore> per_image;
};

SegScores Summarize(std::vector<ImageScore> per_image);

struct SeedAggregate {
  std::vector<SegScores> per_seed;
  double mean_dsc = 0.0;
  double mean_iou = 0.0;
};

// Arithmetic mean over seeds; throws InvalidInputError on an empty list.
SeedAggregate Aggregate(std::span<const SegScores> per_seed);

// "key = value" report for one dataset/seed evaluation.
void WriteSeedReport(std::ostream& os, const std::string& dataset,
                     const std::string& method, uint64_t seed,
                     const SegScores& scores);

struct SummaryRow {
  std::string dataset;
  std::string method;
  double dsc = 0.0;  // fraction in [0, 1]; written as a percentage
  double iou = 0.0;
};

// CSV with fixed column order: dataset,method,DSC,IoU (percentages).
void WriteSummaryCsv(std::ostream& os, std::span<const SummaryRow> rows);

}  // namespace gpmseg

#endif  // GPMSEG_METRICS_H_
