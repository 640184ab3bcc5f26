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

#include "gpmseg/metrics.h"

#include <cstdint>
#include <iomanip>

#include "gpmseg/errors.h"

namespace gpmseg {

torch::Tensor Binarize(const torch::Tensor& logits, double threshold) {
  return (torch::sigmoid(logits.detach().to(torch::kFloat64)) > threshold)
      .to(torch::kUInt8);
}

DiceIou ComputeDiceIou(const torch::Tensor& pred_mask,
                       const torch::Tensor& gt_mask) {
  if (!pred_mask.defined() || !gt_mask.defined() ||
      pred_mask.sizes() != gt_mask.sizes()) {
    throw InvalidInputError("dice_iou: masks must have identical shapes");
  }
  auto p = pred_mask.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  auto g = gt_mask.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const double* pp = p.data_ptr<double>();
  const double* gp = g.data_ptr<double>();
  int64_t inter = 0;
  int64_t p_count = 0;
  int64_t g_count = 0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    if ((pp[i] != 0.0 && pp[i] != 1.0) || (gp[i] != 0.0 && gp[i] != 1.0)) {
      throw InvalidInputError("dice_iou: masks must be binary");
    }
    const bool a = pp[i] != 0.0;
    const bool b = gp[i] != 0.0;
    inter += a && b;
    p_count += a;
    g_count += b;
  }
  if (p_count + g_count == 0) return {1.0, 1.0};
  const int64_t uni = p_count + g_count - inter;
  return {2.0 * static_cast<double>(inter) /
              static_cast<double>(p_count + g_count),
          static_cast<double>(inter) / static_cast<double>(uni)};
}

SegScores Summarize(std::vector<ImageScore> per_image) {
  SegScores out;
  for (const auto& s : per_image) {
    out.dsc += s.dsc;
    out.iou += s.iou;
  }
  if (!per_image.empty()) {
    out.dsc /= static_cast<double>(per_image.size());
    out.iou /= static_cast<double>(per_image.size());
  }
  out.per_image = std::move(per_image);
  return out;
}

SeedAggregate Aggregate(std::span<const SegScores> per_seed) {
  if (per_seed.empty()) {
    throw InvalidInputError("aggregate: at least one seed is required");
  }
  SeedAggregate out;
  out.per_seed.assign(per_seed.begin(), per_seed.end());
  for (const auto& s : per_seed) {
    out.mean_dsc += s.dsc;
    out.mean_iou += s.iou;
  }
  out.mean_dsc /= static_cast<double>(per_seed.size());
  out.mean_iou /= static_cast<double>(per_seed.size());
  return out;
}

void WriteSeedReport(std::ostream& os, const std::string& dataset,
                     const std::string& method, uint64_t seed,
                     const SegScores& scores) {
  os << std::setprecision(6) << std::fixed;
  os << "# scores are means of per-image values (not pixel-pooled)\n";
  os << "dataset = " << dataset << "\n";
  os << "method = " << method << "\n";
  os << "seed = " << seed << "\n";
  os << "images = " << scores.per_image.size() << "\n";
  os << "dsc = " << scores.dsc << "\n";
  os << "iou = " << scores.iou << "\n";
  for (const auto& img : scores.per_image) {
    os << "image." << img.image_id << " = " << img.dsc << " " << img.iou
       << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

void WriteSummaryCsv(std::ostream& os, std::span<const SummaryRow> rows) {
  os << "dataset,method,DSC,IoU\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.method << ',' << 100.0 * r.dsc << ','
       << 100.0 * r.iou << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace gpmseg
