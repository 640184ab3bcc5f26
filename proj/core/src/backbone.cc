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

#include "gpmseg/backbone.h"

#include <sstream>

#include "gpmseg/errors.h"
#include "gpmseg/resample.h"

namespace gpmseg {
namespace {

constexpr int64_t kRequiredDivisor = 16;

std::string ShapeString(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::nn::Conv2d Conv3x3(int64_t in, int64_t out, bool bias) {
  torch::nn::Conv2d conv(
      torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
  torch::NoGradGuard no_grad;
  torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn,
                                   torch::kReLU);
  if (bias) conv->bias.zero_();
  return conv;
}

torch::nn::ConvTranspose2d Up2x(int64_t in, int64_t out) {
  return torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 2).stride(2));
}

Shape4 TraceMaxPool(OpTracer& tracer, const Shape4& in) {
  tracer.elementwise("max_pool", in.numel());
  return {in.n, in.c, in.h / 2, in.w / 2};
}

}  // namespace

void SkipBundle::Validate() const {
  if (features.size() != kNumSkipLevels) {
    throw InvalidInputError("skip bundle must hold 4 tensors, got " +
                            std::to_string(features.size()));
  }
  for (size_t k = 0; k < features.size(); ++k) {
    if (!features[k].defined() || features[k].dim() != 4) {
      throw InvalidInputError("skip " + std::to_string(k) +
                              " is not a (B, C, H, W) tensor");
    }
    if (k == 0) continue;
    const auto& prev = features[k - 1];
    const auto& cur = features[k];
    if (cur.size(0) != prev.size(0) || cur.size(1) <= prev.size(1) ||
        cur.size(2) >= prev.size(2) || cur.size(3) >= prev.size(3)) {
      throw InvalidInputError("skip bundle is not a shallow-to-deep pyramid: " +
                              ShapeString(prev) + " then " + ShapeString(cur));
    }
  }
}

DoubleConvImpl::DoubleConvImpl(int64_t in_channels, int64_t out_channels,
                               bool batch_norm) {
  conv1 = register_module("conv1", Conv3x3(in_channels, out_channels,
                                           /*bias=*/!batch_norm));
  conv2 = register_module("conv2", Conv3x3(out_channels, out_channels,
                                           /*bias=*/!batch_norm));
  if (batch_norm) {
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) {
  auto y = conv1->forward(x);
  if (!bn1.is_empty()) y = bn1->forward(y);
  y = torch::relu(y);
  y = conv2->forward(y);
  if (!bn2.is_empty()) y = bn2->forward(y);
  return torch::relu(y);
}

Shape4 DoubleConvImpl::trace(OpTracer& tracer, const Shape4& in) const {
  auto y = tracer.conv2d(*conv1, in);
  if (!bn1.is_empty()) tracer.batch_norm(*bn1, y);
  tracer.elementwise("relu", y.numel());
  y = tracer.conv2d(*conv2, y);
  if (!bn2.is_empty()) tracer.batch_norm(*bn2, y);
  tracer.elementwise("relu", y.numel());
  return y;
}

UNetImpl::UNetImpl(const BackboneConfig& config) : config_(config) {
  if (config_.in_channels <= 0 || config_.base_channels <= 0 ||
      config_.out_classes <= 0) {
    throw InvalidInputError("backbone channel counts must be positive");
  }
  const bool bn = config_.batch_norm;
  int64_t in = config_.in_channels;
  for (int k = 0; k < kNumSkipLevels; ++k) {
    const int64_t out = config_.level_channels(k);
    encoder_.push_back(register_module("enc" + std::to_string(k),
                                       DoubleConv(in, out, bn)));
    in = out;
  }
  const int64_t deepest = config_.level_channels(kNumSkipLevels - 1);
  bottleneck_ =
      register_module("bottleneck", DoubleConv(deepest, 2 * deepest, bn));

  decoder_.assign(kNumSkipLevels, DoubleConv(nullptr));
  up_.assign(kNumSkipLevels - 1, torch::nn::ConvTranspose2d(nullptr));
  for (int k = kNumSkipLevels - 1; k >= 0; --k) {
    const int64_t c = config_.level_channels(k);
    // The deepest level fuses the bottleneck directly (same resolution).
    const int64_t fused_in = k == kNumSkipLevels - 1 ? 2 * c + c : 2 * c;
    decoder_[k] =
        register_module("dec" + std::to_string(k), DoubleConv(fused_in, c, bn));
    if (k < kNumSkipLevels - 1) {
      up_[k] = register_module("up" + std::to_string(k),
                               Up2x(config_.level_channels(k + 1), c));
    }
  }
  const int64_t c0 = config_.level_channels(0);
  final_up_ = register_module("final_up", Up2x(c0, c0));
  head_ = register_module(
      "head", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(c0, config_.out_classes, 1)));
}

std::array<int64_t, kNumSkipLevels> UNetImpl::skip_channels() const {
  std::array<int64_t, kNumSkipLevels> out{};
  for (int k = 0; k < kNumSkipLevels; ++k) out[k] = config_.level_channels(k);
  return out;
}

std::pair<SkipBundle, torch::Tensor> UNetImpl::encode(
    const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != config_.in_channels) {
    throw InvalidInputError("encode: expected (B, " +
                            std::to_string(config_.in_channels) +
                            ", H, W) image, got " + ShapeString(image));
  }
  if (image.size(2) % kRequiredDivisor != 0 ||
      image.size(3) % kRequiredDivisor != 0) {
    throw InvalidInputError("encode: H and W must be divisible by 16, got " +
                            ShapeString(image));
  }
  SkipBundle skips;
  auto x = image;
  for (auto& stage : encoder_) {
    x = torch::max_pool2d(stage->forward(x), {2, 2});
    skips.features.push_back(x);
  }
  return {std::move(skips), bottleneck_->forward(x)};
}

torch::Tensor UNetImpl::decode(const SkipBundle& skips,
                               const torch::Tensor& bottleneck) {
  skips.Validate();
  const auto& f = skips.features;
  for (int k = 0; k < kNumSkipLevels; ++k) {
    if (f[k].size(1) != config_.level_channels(k)) {
      throw InvalidInputError("decode: skip " + std::to_string(k) + " has " +
                              std::to_string(f[k].size(1)) +
                              " channels, expected " +
                              std::to_string(config_.level_channels(k)));
    }
    if (k > 0 && (f[k].size(2) * 2 != f[k - 1].size(2) ||
                  f[k].size(3) * 2 != f[k - 1].size(3))) {
      throw InvalidInputError("decode: skip " + std::to_string(k) +
                              " is not half the resolution of skip " +
                              std::to_string(k - 1));
    }
  }
  const auto& deepest = f.back();
  if (bottleneck.dim() != 4 || bottleneck.size(1) != 2 * deepest.size(1) ||
      bottleneck.size(2) != deepest.size(2) ||
      bottleneck.size(3) != deepest.size(3)) {
    throw InvalidInputError("decode: bottleneck " + ShapeString(bottleneck) +
                            " does not match deepest skip " +
                            ShapeString(deepest));
  }

  auto x = decoder_.back()->forward(torch::cat({bottleneck, deepest}, 1));
  for (int k = kNumSkipLevels - 2; k >= 0; --k) {
    x = up_[k]->forward(x);
    x = decoder_[k]->forward(torch::cat({x, f[k]}, 1));
  }
  return head_->forward(final_up_->forward(x));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& image) {
  auto [skips, bottleneck] = encode(image);
  return decode(skips, bottleneck);
}

std::pair<std::vector<Shape4>, Shape4> UNetImpl::trace_encode(
    OpTracer& tracer, const Shape4& in) const {
  std::vector<Shape4> skips;
  Shape4 x = in;
  for (int k = 0; k < kNumSkipLevels; ++k) {
    auto scope = tracer.scope("enc" + std::to_string(k));
    x = TraceMaxPool(tracer, encoder_[k]->trace(tracer, x));
    skips.push_back(x);
  }
  auto scope = tracer.scope("bottleneck");
  return {skips, bottleneck_->trace(tracer, x)};
}

Shape4 UNetImpl::trace_decode(OpTracer& tracer,
                              const std::vector<Shape4>& skips,
                              const Shape4& bottleneck) const {
  Shape4 x;
  {
    auto scope = tracer.scope("dec" + std::to_string(kNumSkipLevels - 1));
    Shape4 fused = bottleneck;
    fused.c += skips.back().c;
    x = decoder_.back()->trace(tracer, fused);
  }
  for (int k = kNumSkipLevels - 2; k >= 0; --k) {
    {
      auto scope = tracer.scope("up" + std::to_string(k));
      x = tracer.conv_transpose2d(*up_[k], x);
    }
    auto scope = tracer.scope("dec" + std::to_string(k));
    x.c += skips[k].c;
    x = decoder_[k]->trace(tracer, x);
  }
  {
    auto scope = tracer.scope("final_up");
    x = tracer.conv_transpose2d(*final_up_, x);
  }
  auto scope = tracer.scope("head");
  return tracer.conv2d(*head_, x);
}

torch::Tensor ForwardWithGpm(SkipBackbone& backbone, const torch::Tensor& image,
                             const std::optional<torch::Tensor>& depth_prior,
                             GpmChainImpl* chain) {
  auto [skips, bottleneck] = backbone.encode(image);
  if (chain != nullptr) {
    if (!depth_prior || !depth_prior->defined()) {
      throw InvalidInputError(
          "forward_with_gpm: a depth prior is required when GPMs are present");
    }
    const auto& depth = *depth_prior;
    if (depth.dim() != 4 || depth.size(0) != image.size(0)) {
      throw InvalidInputError("forward_with_gpm: depth prior " +
                              ShapeString(depth) + " does not pair with image " +
                              ShapeString(image));
    }
    auto aligned = ResizeBilinear(depth, image.size(2), image.size(3));
    skips.features = chain->forward(skips.features, aligned);
  }
  return backbone.decode(skips, bottleneck);
}

void to_json(nlohmann::json& j, const ModelConfig& config) {
  j = nlohmann::json{
      {"in_channels", config.backbone.in_channels},
      {"base_channels", config.backbone.base_channels},
      {"out_classes", config.backbone.out_classes},
      {"batch_norm", config.backbone.batch_norm},
      {"init", "kaiming_normal_fan_in"},
      {"use_gpm", config.use_gpm},
      {"ordering", std::string(ToString(config.ordering))},
      {"similarity_scaling", std::string(ToString(config.scaling))},
      {"attention_kernel", config.attention_kernel},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& config) {
  j.at("in_channels").get_to(config.backbone.in_channels);
  j.at("base_channels").get_to(config.backbone.base_channels);
  j.at("out_classes").get_to(config.backbone.out_classes);
  j.at("batch_norm").get_to(config.backbone.batch_norm);
  j.at("use_gpm").get_to(config.use_gpm);
  config.ordering = ParseGpmOrdering(j.at("ordering").get<std::string>());
  config.scaling =
      ParseSimilarityScaling(j.at("similarity_scaling").get<std::string>());
  j.at("attention_kernel").get_to(config.attention_kernel);
}

SegmentationNetImpl::SegmentationNetImpl(const ModelConfig& config)
    : config_(config) {
  backbone = register_module("backbone", UNet(config_.backbone));
  if (config_.use_gpm) {
    auto plan =
        StagePlan::ForUNet(config_.backbone.base_channels, config_.ordering);
    plan.scaling = config_.scaling;
    plan.kernel_size = config_.attention_kernel;
    gpm = register_module("gpm", GpmChain(plan));
  }
}

torch::Tensor SegmentationNetImpl::forward(const torch::Tensor& image,
                                           const torch::Tensor& depth_prior) {
  std::optional<torch::Tensor> depth;
  if (depth_prior.defined()) depth = depth_prior;
  return ForwardWithGpm(*backbone, image, depth,
                        has_gpm() ? gpm.get() : nullptr);
}

Shape4 SegmentationNetImpl::trace(OpTracer& tracer, const Shape4& image) const {
  std::vector<Shape4> skips;
  Shape4 bottleneck;
  {
    auto scope = tracer.scope("backbone");
    std::tie(skips, bottleneck) = backbone->trace_encode(tracer, image);
  }
  if (has_gpm()) {
    auto scope = tracer.scope("gpm");
    skips = gpm->trace(tracer, skips, {image.n, 1, image.h, image.w});
  }
  auto scope = tracer.scope("backbone");
  return backbone->trace_decode(tracer, skips, bottleneck);
}

SegmentationNet MakeModel(const ModelConfig& config, uint64_t seed) {
  torch::manual_seed(seed);
  return SegmentationNet(config);
}

std::vector<std::pair<std::string, std::vector<int64_t>>> LayerManifest(
    const torch::nn::Module& module) {
  std::vector<std::pair<std::string, std::vector<int64_t>>> out;
  for (const auto& p : module.named_parameters()) {
    out.emplace_back(p.key(), p.value().sizes().vec());
  }
  for (const auto& b : module.named_buffers()) {
    out.emplace_back(b.key(), b.value().sizes().vec());
  }
  return out;
}

}  // namespace gpmseg
