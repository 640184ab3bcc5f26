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

#ifndef GPMSEG_DEPTH_IO_H_
#define GPMSEG_DEPTH_IO_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

namespace gpmseg {

enum class DepthSource { kFile, kSynthetic };

struct DepthRange {
  double min = 0.0;
  double max = 0.0;
};

struct DepthRecord {
  std::string image_id;
  torch::Tensor depth;  // (1, 1, H, W) float32 in [0, 1]
  DepthSource source = DepthSource::kFile;
  // Raw range before min-max normalization, for de-normalizing to mm.
  std::optional<DepthRange> original_range_mm;
};

// Reads a depth prior and min-max normalizes it to [0, 1]; a constant map
// normalizes to all zeros. When height/width are positive the map is
// resampled bilinearly to that size.
//
// Accepted files:
//  * 8/16-bit grayscale PNG. Counts are millimetres unless the file carries
//    a "gpmseg:range_mm" text chunk ("<min> <max>"), in which case counts
//    0..65535 map linearly onto that range.
//  * Raw float32 ".gpmd": magic "GPMD", u16 height, u16 width (little
//    endian), then height*width little-endian float32 values in row order.
//
// Throws IoError for unreadable files and DataError for NaN/negative data.
DepthRecord LoadDepth(const std::filesystem::path& path, int64_t height = 0,
                      int64_t width = 0);

// Writes a [0, 1] depth map as a 16-bit PNG, value = round(d * 65535). The
// optional range is stored in the text chunk read back by LoadDepth.
void SaveDepthPng16(const std::filesystem::path& path,
                    const torch::Tensor& depth,
                    const std::optional<DepthRange>& range_mm = std::nullopt);

// Writes raw depth values (any non-negative units) in the GPMD format.
void SaveDepthRaw(const std::filesystem::path& path, const torch::Tensor& depth);

// Closed-form tunnel profile used by SynthDepth before noise and
// normalization: exp(-3 rho^2), rho the distance from the image centre
// scaled so the corners sit at rho = 1.
double TunnelProfile(int64_t y, int64_t x, int64_t height, int64_t width);

// Upper bound on |noise| added to TunnelProfile by SynthDepth.
inline constexpr double kSynthNoiseBound = 0.09;

// Colon-like synthetic prior: far (large) depth at the centre falling off
// radially, plus three seeded low-frequency sinusoids, normalized to [0, 1].
// Deterministic per (height, width, seed).
DepthRecord SynthDepth(int64_t height, int64_t width, uint64_t seed);

struct DepthMetrics {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double abs_rel = 0.0;
  double rmse = 0.0;
  double log10 = 0.0;
  // True when rmse/log10 were computed on de-normalized millimetres.
  bool metric_units = false;
  int64_t valid_pixels = 0;
};

// Smallest depth used in ratio and log terms; non-positive predictions are
// clamped to it.
inline constexpr double kMinPredictedDepth = 1e-6;

// Six-metric depth evaluation over pixels where valid_mask != 0 and gt > 0:
//   delta_k = frac(max(p/g, g/p) < 1.25^k), AbsRel = mean |p - g| / g,
//   RMSE = sqrt(mean (p - g)^2), log10 = mean |log10 p - log10 g|.
// With range_mm every value is first mapped to min + v * (max - min) and all
// metrics are reported in millimetres. valid_mask may be undefined (all
// pixels). Throws UndefinedMetricError when no pixel is valid.
DepthMetrics ComputeDepthMetrics(
    const torch::Tensor& pred, const torch::Tensor& gt,
    const torch::Tensor& valid_mask = {},
    const std::optional<DepthRange>& range_mm = std::nullopt);

}  // namespace gpmseg

#endif  // GPMSEG_DEPTH_IO_H_
