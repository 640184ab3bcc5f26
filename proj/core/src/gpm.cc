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

#include "gpmseg/gpm.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gpmseg/errors.h"
#include "gpmseg/resample.h"

namespace gpmseg {
namespace {

std::string ShapeString(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void RequireRank4(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4) {
    throw InvalidInputError(std::string(what) + ": expected (B, C, H, W)");
  }
}

torch::nn::Conv2d Pointwise(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(false));
}

int64_t ResolveDepthChannels(int64_t feature_channels, int64_t requested) {
  return requested > 0 ? requested : std::max<int64_t>(1, feature_channels / 2);
}

// (B, C, H, W) -> (B, T, C)
torch::Tensor Tokens(const torch::Tensor& x) {
  return x.flatten(2).transpose(1, 2);
}

}  // namespace

std::string_view ToString(SimilarityScaling scaling) {
  return scaling == SimilarityScaling::kChannels ? "channels" : "tokens";
}

SimilarityScaling ParseSimilarityScaling(std::string_view text) {
  if (text == "channels") return SimilarityScaling::kChannels;
  if (text == "tokens") return SimilarityScaling::kTokens;
  throw InvalidInputError("unknown similarity scaling '" + std::string(text) +
                          "' (expected channels|tokens)");
}

std::string_view ToString(GpmOrdering ordering) {
  return ordering == GpmOrdering::kBottomToTop ? "bottom_to_top"
                                               : "top_to_bottom";
}

GpmOrdering ParseGpmOrdering(std::string_view text) {
  if (text == "bottom_to_top" || text == "bottom") {
    return GpmOrdering::kBottomToTop;
  }
  if (text == "top_to_bottom" || text == "top") {
    return GpmOrdering::kTopToBottom;
  }
  throw InvalidInputError("unknown GPM ordering '" + std::string(text) +
                          "' (expected bottom_to_top|top_to_bottom)");
}

SimilarityMap CubSimilarity(const torch::Tensor& f_refined,
                            const torch::Tensor& g_embed,
                            SimilarityScaling scaling) {
  RequireRank4(f_refined, "cub_similarity");
  RequireRank4(g_embed, "cub_similarity");
  if (f_refined.sizes() != g_embed.sizes()) {
    throw InvalidInputError("cub_similarity: feature shape " +
                            ShapeString(f_refined) +
                            " != geometry embedding shape " +
                            ShapeString(g_embed));
  }
  const int64_t n = scaling == SimilarityScaling::kChannels
                        ? f_refined.size(1)
                        : f_refined.size(2) * f_refined.size(3);
  auto logits = torch::bmm(Tokens(f_refined), Tokens(g_embed).transpose(1, 2));
  logits = logits / std::sqrt(static_cast<double>(n));
  return {torch::softmax(logits, -1)};
}

torch::Tensor CubEnhance(const torch::Tensor& f_refined,
                         const torch::Tensor& g_embed,
                         const SimilarityMap& c_map) {
  RequireRank4(f_refined, "cub_enhance");
  RequireRank4(g_embed, "cub_enhance");
  if (f_refined.sizes() != g_embed.sizes()) {
    throw InvalidInputError("cub_enhance: feature/embedding shape mismatch");
  }
  const int64_t b = f_refined.size(0);
  const int64_t t = f_refined.size(2) * f_refined.size(3);
  if (!c_map.values.defined() || c_map.values.dim() != 3 ||
      c_map.values.size(0) != b || c_map.values.size(1) != t ||
      c_map.values.size(2) != t) {
    throw InvalidInputError("cub_enhance: similarity map must be (" +
                            std::to_string(b) + ", " + std::to_string(t) +
                            ", " + std::to_string(t) + ")");
  }
  auto attended = torch::bmm(c_map.values, Tokens(g_embed));  // (B, T, C)
  return attended.transpose(1, 2).reshape(f_refined.sizes()) + f_refined;
}

GpmStageImpl::GpmStageImpl(const GpmStageOptions& options)
    : options_(options) {
  if (options_.feature_channels <= 0) {
    throw InvalidInputError("GPM stage needs positive feature_channels");
  }
  if (options_.scale_factor <= 0) {
    throw InvalidInputError("GPM stage needs a positive scale_factor");
  }
  options_.depth_channels =
      ResolveDepthChannels(options_.feature_channels, options_.depth_channels);

  const int64_t c = options_.feature_channels;
  const int64_t cd = options_.depth_channels;
  auto sca = [&](int64_t channels) {
    return ScaUnit(ScaOptions{.channels = channels,
                              .kernel_size = options_.kernel_size,
                              .reduction = options_.reduction});
  };
  cub_sca1 = register_module("cub_sca1", sca(c));
  cub_sca2 = register_module("cub_sca2", sca(c));
  geo_sca = register_module("geo_sca", sca(cd));
  sub_sca = register_module("sub_sca", sca(cd));
  project_up = register_module("project_up", Pointwise(cd, c));
  if (options_.fuse_depth) {
    tex_sca = register_module("tex_sca", sca(c));
    project_down = register_module("project_down", Pointwise(c, cd));
  }
}

void GpmStageImpl::CheckDepth(const torch::Tensor& d) const {
  RequireRank4(d, "gpm depth stream");
  if (d.size(1) != options_.depth_channels) {
    throw InvalidInputError(
        "gpm depth stream: expected " + std::to_string(options_.depth_channels) +
        " channels, got " + std::to_string(d.size(1)));
  }
  if (options_.depth_size &&
      (d.size(2) != options_.depth_size->first ||
       d.size(3) != options_.depth_size->second)) {
    throw InvalidInputError(
        "gpm depth stream: expected resolution " +
        std::to_string(options_.depth_size->first) + "x" +
        std::to_string(options_.depth_size->second) + ", got " +
        ShapeString(d));
  }
}

void GpmStageImpl::CheckFeatures(const torch::Tensor& f) const {
  RequireRank4(f, "gpm skip features");
  if (f.size(1) != options_.feature_channels) {
    throw InvalidInputError(
        "gpm skip features: expected " +
        std::to_string(options_.feature_channels) + " channels, got " +
        std::to_string(f.size(1)));
  }
}

torch::Tensor GpmStageImpl::SubRefineDepth(const torch::Tensor& d_o) {
  CheckDepth(d_o);
  return sub_sca->forward(d_o);
}

torch::Tensor GpmStageImpl::CubRefineFeatures(const torch::Tensor& f_o) {
  CheckFeatures(f_o);
  return cub_sca2->forward(cub_sca1->forward(f_o));
}

torch::Tensor GpmStageImpl::GeometryEmbedding(const torch::Tensor& d_refined) {
  CheckDepth(d_refined);
  auto up = Upsample(d_refined, options_.scale_factor);
  return project_up->forward(geo_sca->forward(up));
}

torch::Tensor GpmStageImpl::SubFuseDepth(const torch::Tensor& d_refined,
                                         const torch::Tensor& f_e) {
  CheckFeatures(f_e);
  RequireRank4(d_refined, "sub_fuse_depth");
  if (!options_.fuse_depth) return d_refined;
  auto texture =
      project_down->forward(tex_sca->forward(Downsample(f_e, options_.scale_factor)));
  if (texture.sizes() != d_refined.sizes()) {
    throw InvalidInputError("sub_fuse_depth: downsampled features " +
                            ShapeString(texture) + " do not match depth " +
                            ShapeString(d_refined));
  }
  return d_refined + texture;
}

GpmOutput GpmStageImpl::forward(const torch::Tensor& f_o,
                                const torch::Tensor& d_o) {
  CheckFeatures(f_o);
  CheckDepth(d_o);
  const int64_t s = options_.scale_factor;
  if (d_o.size(0) != f_o.size(0) || d_o.size(2) * s != f_o.size(2) ||
      d_o.size(3) * s != f_o.size(3)) {
    throw InvalidInputError("gpm_forward: depth " + ShapeString(d_o) +
                            " is not skip " + ShapeString(f_o) + " / " +
                            std::to_string(s));
  }
  auto d_refined = SubRefineDepth(d_o);
  auto g_embed = GeometryEmbedding(d_refined);
  auto f_refined = CubRefineFeatures(f_o);
  auto c_map = CubSimilarity(f_refined, g_embed, options_.scaling);
  auto f_e = CubEnhance(f_refined, g_embed, c_map);
  auto d_e = SubFuseDepth(d_refined, f_e);
  return {f_e, d_e};
}

std::pair<Shape4, Shape4> GpmStageImpl::trace(OpTracer& tracer,
                                              const Shape4& f_o,
                                              const Shape4& d_o) const {
  const int64_t s = options_.scale_factor;
  {
    auto scope = tracer.scope("sub_sca");
    sub_sca->trace(tracer, d_o);
  }
  Shape4 up{d_o.n, d_o.c, d_o.h * s, d_o.w * s};
  tracer.elementwise("upsample", up.numel());
  Shape4 g;
  {
    auto scope = tracer.scope("geo_sca");
    g = geo_sca->trace(tracer, up);
  }
  {
    auto scope = tracer.scope("project_up");
    g = tracer.conv2d(*project_up, g);
  }
  Shape4 f = f_o;
  {
    auto scope = tracer.scope("cub_sca1");
    f = cub_sca1->trace(tracer, f);
  }
  {
    auto scope = tracer.scope("cub_sca2");
    f = cub_sca2->trace(tracer, f);
  }
  const int64_t t = f.tokens();
  // Similarity logits, softmax, then the attended embedding.
  tracer.matmul(f.n, t, f.c, t);
  tracer.elementwise("scale", f.n * t * t);
  tracer.elementwise("softmax", f.n * t * t);
  tracer.matmul(f.n, t, t, f.c);
  tracer.elementwise("add", f.numel());

  if (!options_.fuse_depth) return {f, d_o};
  tracer.elementwise("downsample", f.numel());
  Shape4 down{f.n, f.c, f.h / s, f.w / s};
  {
    auto scope = tracer.scope("tex_sca");
    down = tex_sca->trace(tracer, down);
  }
  {
    auto scope = tracer.scope("project_down");
    down = tracer.conv2d(*project_down, down);
  }
  tracer.elementwise("add", down.numel());
  return {f, down};
}

StagePlan StagePlan::ForUNet(int64_t base_channels, GpmOrdering ordering) {
  StagePlan plan;
  for (int k = 0; k < kNumSkipLevels; ++k) {
    plan.stages[k].feature_channels = base_channels << k;
  }
  plan.ordering = ordering;
  return plan;
}

std::array<int, kNumSkipLevels> VisitOrder(GpmOrdering ordering) {
  if (ordering == GpmOrdering::kBottomToTop) return {3, 2, 1, 0};
  return {0, 1, 2, 3};
}

GpmChainImpl::GpmChainImpl(const StagePlan& plan)
    : plan_(plan), order_(VisitOrder(plan.ordering)) {
  stages = register_module("stages", torch::nn::ModuleList());
  for (int k = 0; k < kNumSkipLevels; ++k) {
    auto& spec = plan_.stages[k];
    spec.depth_channels =
        ResolveDepthChannels(spec.feature_channels, spec.depth_channels);
    stage_list_.emplace_back(GpmStageOptions{
        .feature_channels = spec.feature_channels,
        .depth_channels = spec.depth_channels,
        .scale_factor = plan_.scale_factor,
        .kernel_size = plan_.kernel_size,
        .reduction = plan_.reduction,
        .scaling = plan_.scaling,
        .depth_size = std::nullopt,
        .fuse_depth = k != order_[kNumSkipLevels - 1]});
    stages->push_back(stage_list_.back());
  }
  depth_lift = register_module(
      "depth_lift", Pointwise(plan_.prior_channels,
                              plan_.stages[order_[0]].depth_channels));
  handoffs = register_module("handoffs", torch::nn::ModuleList());
  for (int i = 0; i + 1 < kNumSkipLevels; ++i) {
    handoff_list_.push_back(
        Pointwise(plan_.stages[order_[i]].depth_channels,
                  plan_.stages[order_[i + 1]].depth_channels));
    handoffs->push_back(handoff_list_.back());
  }
}

void GpmChainImpl::CheckSkips(const std::vector<torch::Tensor>& skips) const {
  if (skips.size() != kNumSkipLevels) {
    throw InvalidInputError("chain_forward: expected 4 skip tensors, got " +
                            std::to_string(skips.size()));
  }
  for (int k = 0; k < kNumSkipLevels; ++k) {
    RequireRank4(skips[k], "chain_forward skip");
    if (skips[k].size(1) != plan_.stages[k].feature_channels) {
      throw InvalidInputError(
          "chain_forward: skip " + std::to_string(k) + " has " +
          std::to_string(skips[k].size(1)) + " channels, expected " +
          std::to_string(plan_.stages[k].feature_channels));
    }
    if (skips[k].size(2) % plan_.scale_factor != 0 ||
        skips[k].size(3) % plan_.scale_factor != 0) {
      throw InvalidInputError("chain_forward: skip " + std::to_string(k) +
                              " resolution is not divisible by the scale "
                              "factor");
    }
  }
}

std::vector<torch::Tensor> GpmChainImpl::forward(
    const std::vector<torch::Tensor>& skips, const torch::Tensor& prior) {
  CheckSkips(skips);
  RequireRank4(prior, "chain_forward depth prior");
  if (prior.size(1) != plan_.prior_channels) {
    throw InvalidInputError("chain_forward: depth prior must have " +
                            std::to_string(plan_.prior_channels) +
                            " channel(s)");
  }
  if (bypass) return skips;

  const int64_t s = plan_.scale_factor;
  auto depth_size = [&](int level) {
    return std::pair{skips[level].size(2) / s, skips[level].size(3) / s};
  };

  std::vector<torch::Tensor> enhanced(kNumSkipLevels);
  auto [h0, w0] = depth_size(order_[0]);
  auto depth = depth_lift->forward(ResizeBilinear(prior, h0, w0));
  for (int i = 0; i < kNumSkipLevels; ++i) {
    const int level = order_[i];
    auto out = stage(level)->forward(skips[level], depth);
    enhanced[level] = out.features;
    if (i + 1 < kNumSkipLevels) {
      auto [h, w] = depth_size(order_[i + 1]);
      depth = handoff_list_[i]->forward(ResizeBilinear(out.depth, h, w));
    }
  }
  return enhanced;
}

std::vector<Shape4> GpmChainImpl::trace(OpTracer& tracer,
                                        const std::vector<Shape4>& skips,
                                        const Shape4& prior) const {
  if (skips.size() != kNumSkipLevels) {
    throw InvalidInputError("chain trace: expected 4 skip shapes");
  }
  const int64_t s = plan_.scale_factor;
  std::vector<Shape4> out(skips);
  Shape4 depth{prior.n, prior.c, skips[order_[0]].h / s,
               skips[order_[0]].w / s};
  if (depth.h != prior.h || depth.w != prior.w) {
    tracer.elementwise("resize", depth.numel());
  }
  {
    auto scope = tracer.scope("depth_lift");
    depth = tracer.conv2d(*depth_lift, depth);
  }
  for (int i = 0; i < kNumSkipLevels; ++i) {
    const int level = order_[i];
    Shape4 d_e;
    {
      auto scope = tracer.scope("stages." + std::to_string(level));
      std::tie(out[level], d_e) = stage(level)->trace(tracer, skips[level], depth);
    }
    if (i + 1 < kNumSkipLevels) {
      const auto& next = skips[order_[i + 1]];
      Shape4 resized{d_e.n, d_e.c, next.h / s, next.w / s};
      if (resized.h != d_e.h || resized.w != d_e.w) {
        tracer.elementwise("resize", resized.numel());
      }
      auto scope = tracer.scope("handoffs." + std::to_string(i));
      depth = tracer.conv2d(*handoff_list_[i], resized);
    }
  }
  return out;
}

}  // namespace gpmseg
