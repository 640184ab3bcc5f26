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

#include "gpmseg/resample.h"

#include <vector>

namespace gpmseg {

namespace F = torch::nn::functional;

torch::Tensor ResizeBilinear(const torch::Tensor& x, int64_t height,
                             int64_t width) {
  if (x.size(2) == height && x.size(3) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor ResizeNearest(const torch::Tensor& x, int64_t height,
                            int64_t width) {
  if (x.size(2) == height && x.size(3) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kNearest));
}

torch::Tensor Upsample(const torch::Tensor& x, int64_t factor) {
  if (factor == 1) return x;
  return ResizeBilinear(x, x.size(2) * factor, x.size(3) * factor);
}

torch::Tensor Downsample(const torch::Tensor& x, int64_t factor) {
  if (factor == 1) return x;
  return torch::avg_pool2d(x, {factor, factor});
}

}  // namespace gpmseg
