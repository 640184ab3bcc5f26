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

#ifndef GPMSEG_RESAMPLE_H_
#define GPMSEG_RESAMPLE_H_

#include <cstdint>

#include <torch/torch.h>

namespace gpmseg {

// Bilinear resize of an NCHW tensor (align_corners = false). Returns the
// input unchanged when it already has the requested size.
torch::Tensor ResizeBilinear(const torch::Tensor& x, int64_t height,
                             int64_t width);

// Nearest-neighbour resize, used for binary masks.
torch::Tensor ResizeNearest(const torch::Tensor& x, int64_t height,
                            int64_t width);

// Bilinear upsampling by an integer factor.
torch::Tensor Upsample(const torch::Tensor& x, int64_t factor);

// Average pooling by an integer factor.
torch::Tensor Downsample(const torch::Tensor& x, int64_t factor);

}  // namespace gpmseg

#endif  // GPMSEG_RESAMPLE_H_
