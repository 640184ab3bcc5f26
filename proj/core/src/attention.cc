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

#include "gpmseg/attention.h"

#include <algorithm>
#include <string>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

void RequireRank4(const torch::Tensor& x, const char* op) {
  if (x.dim() != 4) {
    throw InvalidInputError(std::string(op) +
                            ": expected (B, C, H, W) input, got rank " +
                            std::to_string(x.dim()));
  }
}

}  // namespace

int64_t DefaultReduction(int64_t channels) { return channels < 16 ? 4 : 16; }

int64_t BottleneckWidth(int64_t channels, int64_t reduction) {
  return std::max<int64_t>(1, channels / reduction);
}

SpatialAttentionImpl::SpatialAttentionImpl(int64_t kernel_size)
    : kernel_size_(kernel_size) {
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw InvalidInputError("spatial attention kernel size must be odd, got " +
                            std::to_string(kernel_size));
  }
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, kernel_size)
                                    .padding(kernel_size / 2)
                                    .bias(true)));
}

torch::Tensor SpatialAttentionImpl::gate(const torch::Tensor& x) {
  RequireRank4(x, "spatial_attention");
  auto pooled = torch::cat({x.mean(1, /*keepdim=*/true),
                            std::get<0>(x.max(1, /*keepdim=*/true))},
                           1);
  return torch::sigmoid(conv->forward(pooled));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& x) {
  return x * gate(x);
}

Shape4 SpatialAttentionImpl::trace(OpTracer& tracer, const Shape4& in) const {
  tracer.elementwise("channel_pool", 2 * in.numel());
  auto logits = tracer.conv2d(*conv, {in.n, 2, in.h, in.w});
  tracer.elementwise("sigmoid", logits.numel());
  tracer.elementwise("mul", in.numel());
  return in;
}

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction)
    : channels_(channels) {
  if (channels <= 0) {
    throw InvalidInputError("channel attention needs a positive width");
  }
  if (reduction <= 0) reduction = DefaultReduction(channels);
  hidden_ = BottleneckWidth(channels, reduction);
  fc1 = register_module("fc1", torch::nn::Linear(channels, hidden_));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_, channels));
}

torch::Tensor ChannelAttentionImpl::mlp(const torch::Tensor& descriptor) {
  return fc2->forward(torch::relu(fc1->forward(descriptor)));
}

torch::Tensor ChannelAttentionImpl::gate(const torch::Tensor& x) {
  RequireRank4(x, "channel_attention");
  if (x.size(1) != channels_) {
    throw InvalidInputError("channel_attention: expected " +
                            std::to_string(channels_) + " channels, got " +
                            std::to_string(x.size(1)));
  }
  auto avg = x.mean({2, 3});
  auto max = x.amax({2, 3});
  auto logits = mlp(avg) + mlp(max);
  return torch::sigmoid(logits).unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
  return x * gate(x);
}

Shape4 ChannelAttentionImpl::trace(OpTracer& tracer, const Shape4& in) const {
  tracer.elementwise("spatial_pool", 2 * in.numel());
  for (int pass = 0; pass < 2; ++pass) {
    tracer.linear(*fc1, in.n);
    tracer.elementwise("relu", in.n * hidden_);
    tracer.linear(*fc2, in.n);
  }
  tracer.elementwise("add", in.n * channels_);
  tracer.elementwise("sigmoid", in.n * channels_);
  tracer.elementwise("mul", in.numel());
  return in;
}

ScaUnitImpl::ScaUnitImpl(const ScaOptions& options) {
  spatial = register_module("spatial", SpatialAttention(options.kernel_size));
  channel = register_module(
      "channel", ChannelAttention(options.channels, options.reduction));
}

torch::Tensor ScaUnitImpl::forward(const torch::Tensor& x) {
  return channel->forward(spatial->forward(x));
}

Shape4 ScaUnitImpl::trace(OpTracer& tracer, const Shape4& in) const {
  Shape4 out;
  {
    auto s = tracer.scope("spatial");
    out = spatial->trace(tracer, in);
  }
  auto s = tracer.scope("channel");
  return channel->trace(tracer, out);
}

}  // namespace gpmseg
