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

#ifndef GPMSEG_BACKBONE_H_
#define GPMSEG_BACKBONE_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gpmseg/gpm.h"
#include "gpmseg/op_tracer.h"

namespace gpmseg {

struct BackboneConfig {
  int64_t in_channels = 3;
  int64_t base_channels = 64;
  int64_t out_classes = 1;
  bool batch_norm = true;

  // Channel width of skip level k.
  int64_t level_channels(int k) const { return base_channels << k; }
};

// Encoder taps, shallowest first.
struct SkipBundle {
  std::vector<torch::Tensor> features;

  // len == 4, strictly decreasing resolution, strictly increasing channels.
  void Validate() const;
};

// Contract every segmentation backbone must satisfy for GPM insertion: an
// encoder exposing four skip taps and a decoder consuming them. GPMs only
// ever rewrite the SkipBundle between the two calls.
class SkipBackbone {
 public:
  virtual ~SkipBackbone() = default;

  virtual std::pair<SkipBundle, torch::Tensor> encode(
      const torch::Tensor& image) = 0;
  virtual torch::Tensor decode(const SkipBundle& skips,
                               const torch::Tensor& bottleneck) = 0;
  virtual std::array<int64_t, kNumSkipLevels> skip_channels() const = 0;
};

// conv3x3 -> BN -> ReLU, twice.
class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(int64_t in_channels, int64_t out_channels, bool batch_norm);

  torch::Tensor forward(const torch::Tensor& x);
  Shape4 trace(OpTracer& tracer, const Shape4& in) const;

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::BatchNorm2d bn2{nullptr};
};
TORCH_MODULE(DoubleConv);

// Four-level U-Net. Encoder level k convolves at input / 2^k with
// base * 2^k channels and its max-pooled output (input / 2^(k+1)) is skip k.
// The bottleneck doubles the deepest width at input / 16; the decoder fuses
// each skip by concatenation and upsamples with 2x2 transposed convolutions,
// ending in a final transposed convolution back to input resolution and a
// 1x1 logit head.
class UNetImpl : public torch::nn::Module, public SkipBackbone {
 public:
  explicit UNetImpl(const BackboneConfig& config);

  std::pair<SkipBundle, torch::Tensor> encode(
      const torch::Tensor& image) override;
  torch::Tensor decode(const SkipBundle& skips,
                       const torch::Tensor& bottleneck) override;
  std::array<int64_t, kNumSkipLevels> skip_channels() const override;

  torch::Tensor forward(const torch::Tensor& image);

  std::pair<std::vector<Shape4>, Shape4> trace_encode(OpTracer& tracer,
                                                      const Shape4& in) const;
  Shape4 trace_decode(OpTracer& tracer, const std::vector<Shape4>& skips,
                      const Shape4& bottleneck) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::vector<DoubleConv> encoder_;
  DoubleConv bottleneck_{nullptr};
  std::vector<DoubleConv> decoder_;
  std::vector<torch::nn::ConvTranspose2d> up_;  // up_[k]: level k+1 -> k
  torch::nn::ConvTranspose2d final_up_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

// Runs backbone.encode, optionally rewrites the skips with the GPM chain,
// then backbone.decode. With no chain the depth prior is ignored and the
// result is the plain backbone output.
torch::Tensor ForwardWithGpm(SkipBackbone& backbone, const torch::Tensor& image,
                             const std::optional<torch::Tensor>& depth_prior,
                             GpmChainImpl* chain);

struct ModelConfig {
  BackboneConfig backbone;
  bool use_gpm = true;
  GpmOrdering ordering = GpmOrdering::kBottomToTop;
  SimilarityScaling scaling = SimilarityScaling::kChannels;
  int64_t attention_kernel = 7;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

// U-Net with an optional four-stage GPM chain on its skip connections.
class SegmentationNetImpl : public torch::nn::Module {
 public:
  explicit SegmentationNetImpl(const ModelConfig& config);

  // depth_prior may be undefined when the model has no GPM chain.
  torch::Tensor forward(const torch::Tensor& image,
                        const torch::Tensor& depth_prior = {});

  Shape4 trace(OpTracer& tracer, const Shape4& image) const;

  const ModelConfig& config() const { return config_; }
  bool has_gpm() const { return !gpm.is_empty(); }

  UNet backbone{nullptr};
  GpmChain gpm{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(SegmentationNet);

// Seeds torch's generator and constructs the model, so the same seed always
// yields the same initial weights.
SegmentationNet MakeModel(const ModelConfig& config, uint64_t seed);

// (parameter name, shape) for every backbone parameter and buffer, used to
// check that GPM insertion leaves the backbone topology untouched.
std::vector<std::pair<std::string, std::vector<int64_t>>> LayerManifest(
    const torch::nn::Module& module);

}  // namespace gpmseg

#endif  // GPMSEG_BACKBONE_H_
