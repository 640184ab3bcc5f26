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

#include <gtest/gtest.h>

#include "gpmseg/errors.h"
#include "gpmseg/resample.h"
#include "testing/oracles.h"

namespace gpmseg {
namespace {

using testing::Gen;
using testing::ToVector;

GpmStage MakeStage(int64_t channels, int64_t depth_channels = 0,
                   int64_t kernel = 3) {
  return GpmStage(GpmStageOptions{.feature_channels = channels,
                                  .depth_channels = depth_channels,
                                  .kernel_size = kernel});
}

void ZeroParameters(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.zero_();
}

TEST(CubSimilarityTest, ShapeIsTokensByTokens) {
  auto c = CubSimilarity(torch::randn({1, 4, 2, 2}), torch::randn({1, 4, 2, 2}));
  EXPECT_EQ(c.values.sizes(), (std::vector<int64_t>{1, 4, 4}));
}

TEST(CubSimilarityTest, ConstantEmbeddingGivesUniformRows) {
  auto f = torch::randn({2, 5, 3, 4});
  auto g = torch::full({2, 5, 3, 4}, 0.7);
  auto c = CubSimilarity(f, g);
  EXPECT_TRUE(torch::allclose(c.values, torch::full_like(c.values, 1.0 / 12),
                              0, 1e-7));
}

TEST(CubSimilarityTest, RowsAreStochasticAndMatchBruteForce) {
  Gen gen(21);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t c = gen.Int(1, 6), h = gen.Int(1, 4), w = gen.Int(1, 4);
    auto f = gen.Tensor({1, c, h, w}, -2, 2, torch::kFloat64);
    auto g = gen.Tensor({1, c, h, w}, -2, 2, torch::kFloat64);
    for (auto scaling : {SimilarityScaling::kChannels, SimilarityScaling::kTokens}) {
      auto map = CubSimilarity(f, g, scaling);
      const double n = scaling == SimilarityScaling::kChannels
                           ? static_cast<double>(c)
                           : static_cast<double>(h * w);
      const auto ref = testing::BruteForceAttention(f, g, n);
      const auto got = ToVector(map.values);
      ASSERT_EQ(got.size(), ref.weights.size());
      for (size_t i = 0; i < got.size(); ++i) {
        EXPECT_NEAR(got[i], ref.weights[i], 1e-12);
      }
      auto sums = map.values.sum(-1);
      EXPECT_TRUE(torch::allclose(sums, torch::ones_like(sums), 0, 1e-12));
      EXPECT_TRUE((map.values >= 0).all().item<bool>());
    }
  }
}

TEST(CubSimilarityTest, ShapeMismatchThrows) {
  EXPECT_THROW(CubSimilarity(torch::zeros({1, 4, 2, 2}), torch::zeros({1, 4, 2, 3})),
               InvalidInputError);
  EXPECT_THROW(CubSimilarity(torch::zeros({4, 2, 2}), torch::zeros({4, 2, 2})),
               InvalidInputError);
}

TEST(CubEnhanceTest, ZeroEmbeddingLeavesFeaturesBitwise) {
  auto f = torch::randn({1, 8, 16, 16});
  auto g = torch::zeros_like(f);
  auto out = CubEnhance(f, g, CubSimilarity(f, g));
  EXPECT_EQ(out.sizes(), f.sizes());
  EXPECT_TRUE(torch::equal(out, f));
}

TEST(CubEnhanceTest, MatchesTokenLoopOnSmallInstance) {
  Gen gen(22);
  auto f = gen.Tensor({1, 3, 2, 2}, -1, 1, torch::kFloat64);
  auto g = gen.Tensor({1, 3, 2, 2}, -1, 1, torch::kFloat64);
  auto out = ToVector(CubEnhance(f, g, CubSimilarity(f, g)));
  const auto ref = testing::BruteForceAttention(f, g, 3.0);
  for (size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref.output[i], 1e-12);
}

TEST(CubEnhanceTest, InconsistentTokenCountThrows) {
  auto f = torch::randn({1, 3, 2, 2});
  auto bad = SimilarityMap{torch::ones({1, 3, 3}) / 3};
  EXPECT_THROW(CubEnhance(f, f, bad), InvalidInputError);
}

TEST(GpmStageTest, SubRefineDepthIsScaOfSubUnit) {
  torch::manual_seed(23);
  auto stage = MakeStage(8, 4);
  auto d = torch::rand({1, 4, 16, 16});
  EXPECT_TRUE(torch::equal(stage->SubRefineDepth(d), stage->sub_sca->forward(d)));
  EXPECT_TRUE(torch::equal(stage->SubRefineDepth(torch::zeros_like(d)),
                           torch::zeros_like(d)));
  EXPECT_EQ(stage->SubRefineDepth(d).sizes(), d.sizes());
}

TEST(GpmStageTest, CubRefineFeaturesComposesTwoUnits) {
  torch::manual_seed(24);
  auto stage = MakeStage(32);
  auto f = torch::randn({2, 32, 32, 32});
  auto manual = stage->cub_sca2->forward(stage->cub_sca1->forward(f));
  auto got = stage->CubRefineFeatures(f);
  EXPECT_EQ(got.sizes(), f.sizes());
  EXPECT_TRUE(torch::equal(got, manual));
  EXPECT_TRUE(torch::equal(stage->CubRefineFeatures(torch::zeros_like(f)),
                           torch::zeros_like(f)));
  EXPECT_THROW(stage->CubRefineFeatures(torch::zeros({1, 16, 8, 8})),
               InvalidInputError);
}

TEST(GpmStageTest, SubFuseDepthAddsAttentionBranch) {
  torch::manual_seed(25);
  auto stage = MakeStage(6, 3);
  auto d = torch::rand({1, 3, 8, 8});
  auto f_e = torch::randn({1, 6, 16, 16});
  auto branch = stage->project_down->forward(
      stage->tex_sca->forward(torch::avg_pool2d(f_e, 2)));
  EXPECT_TRUE(torch::equal(stage->SubFuseDepth(d, f_e), d + branch));
  EXPECT_TRUE(torch::equal(stage->SubFuseDepth(d, torch::zeros_like(f_e)), d));
  EXPECT_THROW(stage->SubFuseDepth(d, torch::zeros({1, 6, 12, 12})),
               InvalidInputError);
}

TEST(GpmStageTest, ForwardPreservesShapes) {
  torch::manual_seed(26);
  for (auto [c, s] : {std::pair<int64_t, int64_t>{16, 32}, {8, 16}}) {
    auto stage = MakeStage(c);
    auto f = torch::randn({1, c, s, s});
    auto d = torch::rand({1, stage->depth_channels(), s / 2, s / 2});
    auto out = stage->forward(f, d);
    EXPECT_EQ(out.features.sizes(), f.sizes());
    EXPECT_EQ(out.depth.sizes(), d.sizes());
  }
}

TEST(GpmStageTest, ZeroInputsGiveZeroOutputs) {
  torch::manual_seed(27);
  auto stage = MakeStage(8);
  auto out = stage->forward(torch::zeros({2, 8, 8, 8}), torch::zeros({2, 4, 4, 4}));
  EXPECT_EQ(out.features.abs().max().item<double>(), 0.0);
  EXPECT_EQ(out.depth.abs().max().item<double>(), 0.0);
}

TEST(GpmStageTest, ForwardEqualsManualComposition) {
  torch::manual_seed(28);
  auto stage = MakeStage(8, 4);
  auto f = torch::randn({2, 8, 12, 12});
  auto d = torch::rand({2, 4, 6, 6});
  auto out = stage->forward(f, d);

  auto d_ref = stage->sub_sca->forward(d);
  auto up = torch::nn::functional::interpolate(
      d_ref, torch::nn::functional::InterpolateFuncOptions()
                 .size(std::vector<int64_t>{12, 12})
                 .mode(torch::kBilinear)
                 .align_corners(false));
  auto g = stage->project_up->forward(stage->geo_sca->forward(up));
  auto f_ref = stage->cub_sca2->forward(stage->cub_sca1->forward(f));
  auto f_e = CubEnhance(f_ref, g, CubSimilarity(f_ref, g));
  auto d_e = d_ref + stage->project_down->forward(
                         stage->tex_sca->forward(torch::avg_pool2d(f_e, 2)));
  EXPECT_TRUE(torch::allclose(out.features, f_e, 0, 0));
  EXPECT_TRUE(torch::allclose(out.depth, d_e, 0, 0));
}

TEST(GpmStageTest, ZeroGeometryEmbeddingGivesRefinedFeaturesBitwise) {
  torch::manual_seed(29);
  auto stage = MakeStage(8);
  {
    torch::NoGradGuard no_grad;
    stage->project_up->weight.zero_();
  }
  auto f = torch::randn({1, 8, 8, 8});
  auto d = torch::rand({1, 4, 4, 4});
  EXPECT_TRUE(torch::equal(stage->forward(f, d).features,
                           stage->CubRefineFeatures(f)));
}

TEST(GpmStageTest, DepthResolutionMismatchThrows) {
  auto stage = MakeStage(8);
  EXPECT_THROW(stage->forward(torch::zeros({1, 8, 8, 8}), torch::zeros({1, 4, 8, 8})),
               InvalidInputError);
  EXPECT_THROW(stage->forward(torch::zeros({1, 8, 8, 8}), torch::zeros({1, 3, 4, 4})),
               InvalidInputError);
}

TEST(GpmStageTest, GradientsMatchCentralDifferences) {
  torch::manual_seed(30);
  auto stage = MakeStage(4, 2);
  stage->to(torch::kFloat64);
  Gen gen(30);
  auto f = gen.Tensor({1, 4, 4, 4}, -1, 1, torch::kFloat64);
  auto d = gen.Tensor({1, 2, 2, 2}, 0, 1, torch::kFloat64);
  auto by_f = testing::CheckGradient(
      [&](const torch::Tensor& x) {
        auto o = stage->forward(x, d);
        return o.features.sum() + o.depth.sum();
      },
      f);
  auto by_d = testing::CheckGradient(
      [&](const torch::Tensor& x) {
        auto o = stage->forward(f, x);
        return o.features.sum() + o.depth.sum();
      },
      d);
  EXPECT_LT(by_f.max_rel_error, 1e-3);
  EXPECT_LT(by_d.max_rel_error, 1e-3);
}

StagePlan SmallPlan(GpmOrdering ordering) {
  auto plan = StagePlan::ForUNet(4, ordering);
  plan.kernel_size = 3;
  return plan;
}

std::vector<torch::Tensor> SmallSkips(int64_t n = 1) {
  return {torch::randn({n, 4, 16, 16}), torch::randn({n, 8, 8, 8}),
          torch::randn({n, 16, 4, 4}), torch::randn({n, 32, 2, 2})};
}

TEST(GpmChainTest, VisitOrders) {
  EXPECT_EQ(VisitOrder(GpmOrdering::kBottomToTop), (std::array<int, 4>{3, 2, 1, 0}));
  EXPECT_EQ(VisitOrder(GpmOrdering::kTopToBottom), (std::array<int, 4>{0, 1, 2, 3}));
  EXPECT_EQ(ParseGpmOrdering("bottom_to_top"), GpmOrdering::kBottomToTop);
  EXPECT_EQ(ParseGpmOrdering("top_to_bottom"), GpmOrdering::kTopToBottom);
  EXPECT_THROW(ParseGpmOrdering("sideways"), InvalidInputError);
}

TEST(GpmChainTest, OutputShapesMatchSkips) {
  torch::manual_seed(31);
  GpmChain chain(SmallPlan(GpmOrdering::kBottomToTop));
  auto skips = SmallSkips(2);
  auto out = chain->forward(skips, torch::rand({2, 1, 32, 32}));
  ASSERT_EQ(out.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(out[k].sizes(), skips[k].sizes());
}

TEST(GpmChainTest, OrderingChangesOutputs) {
  torch::manual_seed(32);
  GpmChain bottom(SmallPlan(GpmOrdering::kBottomToTop));
  GpmChain top(SmallPlan(GpmOrdering::kTopToBottom));
  // Same stage weights wherever both chains have them; the visiting order,
  // the handoffs and which stage skips the unused depth fuse differ.
  {
    torch::NoGradGuard no_grad;
    for (int k = 0; k < 4; ++k) {
      auto src = bottom->stage(k)->named_parameters();
      for (auto& p : top->stage(k)->named_parameters()) {
        if (const auto* s = src.find(p.key())) p.value().copy_(*s);
      }
    }
  }
  auto skips = SmallSkips();
  auto prior = torch::rand({1, 1, 32, 32});
  auto a = bottom->forward(skips, prior);
  auto b = top->forward(skips, prior);
  bool any_different = false;
  for (int k = 0; k < 4; ++k) any_different |= !torch::equal(a[k], b[k]);
  EXPECT_TRUE(any_different);
}

TEST(GpmChainTest, ZeroParametersGiveSixteenthOfSkips) {
  // Every gate is sigmoid(0) = 1/2 and each stage applies four gates on the
  // feature path (two SCA units), while the zeroed projection kills the
  // geometry branch.
  for (auto ordering : {GpmOrdering::kBottomToTop, GpmOrdering::kTopToBottom}) {
    GpmChain chain(SmallPlan(ordering));
    ZeroParameters(*chain);
    torch::manual_seed(33);
    auto skips = SmallSkips();
    auto out = chain->forward(skips, torch::rand({1, 1, 32, 32}));
    for (int k = 0; k < 4; ++k) {
      EXPECT_TRUE(torch::isfinite(out[k]).all().item<bool>());
      EXPECT_TRUE(torch::allclose(out[k], skips[k] / 16.0, 0, 1e-7));
    }
    auto again = chain->forward(skips, torch::rand({1, 1, 32, 32}));
    for (int k = 0; k < 4; ++k) EXPECT_TRUE(torch::equal(out[k], again[k]));
  }
}

TEST(GpmChainTest, WrongSkipCountAndChannelsThrow) {
  GpmChain chain(SmallPlan(GpmOrdering::kBottomToTop));
  auto skips = SmallSkips();
  auto prior = torch::rand({1, 1, 32, 32});
  auto three = std::vector<torch::Tensor>(skips.begin(), skips.begin() + 3);
  EXPECT_THROW(chain->forward(three, prior), InvalidInputError);
  skips[1] = torch::randn({1, 5, 8, 8});
  EXPECT_THROW(chain->forward(skips, prior), InvalidInputError);
}

TEST(GpmChainTest, BypassReturnsSkipsUntouched) {
  GpmChain chain(SmallPlan(GpmOrdering::kBottomToTop));
  chain->bypass = true;
  auto skips = SmallSkips();
  auto out = chain->forward(skips, torch::rand({1, 1, 32, 32}));
  for (int k = 0; k < 4; ++k) EXPECT_TRUE(torch::equal(out[k], skips[k]));
}

TEST(GpmChainTest, RandomConfigurationsPreserveShapes) {
  Gen gen(34);
  torch::manual_seed(34);
  for (int trial = 0; trial < 10; ++trial) {
    StagePlan plan;
    plan.kernel_size = 3;
    plan.ordering = gen.Coin() ? GpmOrdering::kBottomToTop : GpmOrdering::kTopToBottom;
    std::vector<torch::Tensor> skips;
    for (int k = 0; k < 4; ++k) {
      plan.stages[k].feature_channels = gen.Pick<int64_t>({4, 8, 16});
      const int64_t r = gen.Pick<int64_t>({8, 16, 32});
      skips.push_back(torch::randn({1, plan.stages[k].feature_channels, r, r}));
    }
    GpmChain chain(plan);
    auto out = chain->forward(skips, torch::rand({1, 1, 64, 64}));
    for (int k = 0; k < 4; ++k) EXPECT_EQ(out[k].sizes(), skips[k].sizes());
  }
}

TEST(GpmChainTest, TraceCountsSimilarityProducts) {
  auto stage = MakeStage(6, 3);
  OpTracer tracer;
  stage->trace(tracer, Shape4{2, 6, 4, 4}, Shape4{2, 3, 2, 2});
  // Q K^T and C_map G: 2 * B * T^2 * C each.
  int64_t matmul = 0;
  for (const auto& r : tracer.records()) {
    if (r.kind == "matmul") matmul += r.flops;
  }
  EXPECT_EQ(matmul, 2 * (2 * 2 * 16 * 16 * 6));
}

}  // namespace
}  // namespace gpmseg
