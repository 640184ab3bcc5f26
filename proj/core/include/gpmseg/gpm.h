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

#ifndef GPMSEG_GPM_H_
#define GPMSEG_GPM_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "gpmseg/attention.h"
#include "gpmseg/op_tracer.h"

namespace gpmseg {

// Length used in the 1/sqrt(N) temperature of the similarity softmax.
enum class SimilarityScaling {
  kChannels,  // N = C, the dot-product length
  kTokens,    // N = H * W
};

std::string_view ToString(SimilarityScaling scaling);
SimilarityScaling ParseSimilarityScaling(std::string_view text);

// Row-stochastic token-to-token weights, one (T, T) matrix per batch item.
struct SimilarityMap {
  torch::Tensor values;  // (B, T, T)

  int64_t batch() const { return values.size(0); }
  int64_t tokens() const { return values.size(1); }
};

// Softmax((F' tokens) (G tokens)^T / sqrt(N)) over the last axis. Both inputs
// are (B, C, H, W) and must have identical shapes.
SimilarityMap CubSimilarity(
    const torch::Tensor& f_refined, const torch::Tensor& g_embed,
    SimilarityScaling scaling = SimilarityScaling::kChannels);

// F_e = reshape(C_map . G tokens) + F'.
torch::Tensor CubEnhance(const torch::Tensor& f_refined,
                         const torch::Tensor& g_embed,
                         const SimilarityMap& c_map);

struct GpmStageOptions {
  int64_t feature_channels = 0;
  int64_t depth_channels = 0;  // 0 selects max(1, feature_channels / 2)
  int64_t scale_factor = 2;
  int64_t kernel_size = 7;
  int64_t reduction = 0;  // 0 selects the CBAM default per unit width
  SimilarityScaling scaling = SimilarityScaling::kChannels;
  // When set, the depth stream must arrive at exactly this (H, W).
  std::optional<std::pair<int64_t, int64_t>> depth_size;
  // Without the SUB fuse branch D_e = D' and tex_sca / project_down are not
  // built. The chain uses this for its last stage, whose D_e has no consumer.
  bool fuse_depth = true;
};

struct GpmOutput {
  torch::Tensor features;  // F_e, shape of F_o
  torch::Tensor depth;     // D_e, shape of D_o
};

// One Geometric Prior-guided Module attached to a single skip level.
//
// The depth stream lives at 1/scale_factor of the skip resolution and carries
// depth_channels maps. Data flow:
//   D'  = sca_sub(D_o)
//   G   = project_up(sca_geo(Upsample(D')))
//   F'  = sca_cub2(sca_cub1(F_o))
//   F_e = Softmax(F' G^T / sqrt(N)) G + F'
//   D_e = D' + project_down(sca_tex(Downsample(F_e)))
// Both projections are bias-free 1x1 convolutions, so all-zero inputs map to
// all-zero outputs.
class GpmStageImpl : public torch::nn::Module {
 public:
  explicit GpmStageImpl(const GpmStageOptions& options);

  GpmOutput forward(const torch::Tensor& f_o, const torch::Tensor& d_o);

  torch::Tensor SubRefineDepth(const torch::Tensor& d_o);
  torch::Tensor CubRefineFeatures(const torch::Tensor& f_o);
  // Geometry-aware embedding of the refined depth at skip resolution.
  torch::Tensor GeometryEmbedding(const torch::Tensor& d_refined);
  torch::Tensor SubFuseDepth(const torch::Tensor& d_refined,
                             const torch::Tensor& f_e);

  std::pair<Shape4, Shape4> trace(OpTracer& tracer, const Shape4& f_o,
                                  const Shape4& d_o) const;

  const GpmStageOptions& options() const { return options_; }
  int64_t feature_channels() const { return options_.feature_channels; }
  int64_t depth_channels() const { return options_.depth_channels; }

  ScaUnit cub_sca1{nullptr};
  ScaUnit cub_sca2{nullptr};
  ScaUnit geo_sca{nullptr};
  ScaUnit sub_sca{nullptr};
  ScaUnit tex_sca{nullptr};  // null unless fuse_depth
  torch::nn::Conv2d project_up{nullptr};    // depth_channels -> feature_channels
  torch::nn::Conv2d project_down{nullptr};  // feature_channels -> depth_channels; null unless fuse_depth

 private:
  void CheckDepth(const torch::Tensor& d) const;
  void CheckFeatures(const torch::Tensor& f) const;

  GpmStageOptions options_;
};
TORCH_MODULE(GpmStage);

enum class GpmOrdering {
  kBottomToTop,  // deepest skip first (default)
  kTopToBottom,  // shallowest skip first
};

std::string_view ToString(GpmOrdering ordering);
GpmOrdering ParseGpmOrdering(std::string_view text);

inline constexpr int kNumSkipLevels = 4;

struct StageSpec {
  int64_t feature_channels = 0;
  int64_t depth_channels = 0;  // 0 selects max(1, feature_channels / 2)
};

// Static description of the four skip levels a chain serves.
struct StagePlan {
  std::array<StageSpec, kNumSkipLevels> stages;
  GpmOrdering ordering = GpmOrdering::kBottomToTop;
  int64_t scale_factor = 2;
  int64_t kernel_size = 7;
  int64_t reduction = 0;
  SimilarityScaling scaling = SimilarityScaling::kChannels;
  int64_t prior_channels = 1;

  // Channel plan of a U-Net whose level k carries base * 2^k channels.
  static StagePlan ForUNet(int64_t base_channels,
                           GpmOrdering ordering = GpmOrdering::kBottomToTop);
};

// Skip indices (0 = shallowest) in the order the chain visits them.
std::array<int, kNumSkipLevels> VisitOrder(GpmOrdering ordering);

// Four GPM stages plus the depth-stream plumbing between them: a 1x1 lift of
// the raw prior to the first visited stage's width and a 1x1 handoff between
// consecutive stages. The depth stream is resized bilinearly whenever it
// moves to a stage with a different resolution.
class GpmChainImpl : public torch::nn::Module {
 public:
  explicit GpmChainImpl(const StagePlan& plan);

  // skips ordered shallow -> deep; prior is (B, prior_channels, H, W) at any
  // resolution. Returns enhanced skips in the same order and shapes.
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& skips,
                                     const torch::Tensor& prior);

  std::vector<Shape4> trace(OpTracer& tracer, const std::vector<Shape4>& skips,
                            const Shape4& prior) const;

  const StagePlan& plan() const { return plan_; }
  GpmStage stage(int level) const { return stage_list_.at(level); }

  // When set, forward validates its inputs and returns the skips untouched.
  bool bypass = false;

  torch::nn::ModuleList stages{nullptr};
  torch::nn::Conv2d depth_lift{nullptr};
  torch::nn::ModuleList handoffs{nullptr};

 private:
  void CheckSkips(const std::vector<torch::Tensor>& skips) const;

  StagePlan plan_;
  std::array<int, kNumSkipLevels> order_;
  std::vector<GpmStage> stage_list_;
  std::vector<torch::nn::Conv2d> handoff_list_;
};
TORCH_MODULE(GpmChain);

}  // namespace gpmseg

#endif  // GPMSEG_GPM_H_
