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

#ifndef GPMSEG_ATTENTION_H_
#define GPMSEG_ATTENTION_H_

#include <cstdint>

#include <torch/torch.h>

#include "gpmseg/op_tracer.h"

namespace gpmseg {

// CBAM-style bottleneck width rule: reduction 16, or 4 for narrow maps, and
// never fewer than one hidden unit.
int64_t DefaultReduction(int64_t channels);
int64_t BottleneckWidth(int64_t channels, int64_t reduction);

// Spatial gate: sigmoid(conv_k([mean_c(x); max_c(x)])) broadcast over
// channels. Maps smaller than the kernel are handled by zero padding.
class SpatialAttentionImpl : public torch::nn::Module {
 public:
  explicit SpatialAttentionImpl(int64_t kernel_size = 7);

  torch::Tensor forward(const torch::Tensor& x);
  // (B, 1, H, W) gate in (0, 1).
  torch::Tensor gate(const torch::Tensor& x);
  Shape4 trace(OpTracer& tracer, const Shape4& in) const;

  int64_t kernel_size() const { return kernel_size_; }

  torch::nn::Conv2d conv{nullptr};

 private:
  int64_t kernel_size_;
};
TORCH_MODULE(SpatialAttention);

// Channel gate: sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))) with one shared
// two-layer bottleneck MLP.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  ChannelAttentionImpl(int64_t channels, int64_t reduction = 0);

  torch::Tensor forward(const torch::Tensor& x);
  // (B, C, 1, 1) gate in (0, 1).
  torch::Tensor gate(const torch::Tensor& x);
  Shape4 trace(OpTracer& tracer, const Shape4& in) const;

  int64_t channels() const { return channels_; }
  int64_t hidden() const { return hidden_; }

  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};

 private:
  torch::Tensor mlp(const torch::Tensor& descriptor);

  int64_t channels_;
  int64_t hidden_;
};
TORCH_MODULE(ChannelAttention);

struct ScaOptions {
  int64_t channels = 0;
  int64_t kernel_size = 7;
  int64_t reduction = 0;  // 0 selects DefaultReduction(channels)
};

// Spatial attention followed by channel attention: channel(spatial(x)).
class ScaUnitImpl : public torch::nn::Module {
 public:
  explicit ScaUnitImpl(const ScaOptions& options);
  explicit ScaUnitImpl(int64_t channels)
      : ScaUnitImpl(ScaOptions{.channels = channels}) {}

  torch::Tensor forward(const torch::Tensor& x);
  Shape4 trace(OpTracer& tracer, const Shape4& in) const;

  int64_t channels() const { return channel->channels(); }

  SpatialAttention spatial{nullptr};
  ChannelAttention channel{nullptr};
};
TORCH_MODULE(ScaUnit);

}  // namespace gpmseg

#endif  // GPMSEG_ATTENTION_H_
