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

#include "gpmseg/complexity.h"

#include <gtest/gtest.h>

#include <sstream>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

struct OneConvImpl : torch::nn::Module {
  OneConvImpl(int64_t in, int64_t out, int64_t k)
      : conv(register_module(
            "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                                          .padding(k / 2)))) {}
  torch::nn::Conv2d conv;
};
TORCH_MODULE(OneConv);

TEST(CountParamsTest, SingleConvMatchesFormula) {
  for (auto [in, out, k] : {std::tuple{3, 8, 3}, {16, 4, 1}, {5, 7, 7}}) {
    OneConv m(in, out, k);
    EXPECT_EQ(CountParams(*m).params, out * (in * k * k + 1));
  }
}

TEST(CountFlopsTest, SingleConvMatchesFormula) {
  OneConv m(3, 8, 3);
  const Shape4 in{1, 3, 256, 256};
  const auto r = CountFlops(*m, [&](OpTracer& t) { t.conv2d(*m->conv, in); }, in);
  EXPECT_EQ(r.flops, int64_t{2} * 8 * 27 * 256 * 256);
}

TEST(CountFlopsTest, UntracedOrUnknownLayersAreReported) {
  OneConv m(3, 8, 3);
  const Shape4 in{1, 3, 16, 16};
  EXPECT_THROW(CountFlops(*m, [](OpTracer&) {}, in), UnsupportedLayerError);

  struct WithDropout : torch::nn::Module {
    WithDropout() {
      conv = register_module("conv", torch::nn::Conv2d(3, 3, 1));
      register_module("drop", torch::nn::Dropout(0.5));
    }
    torch::nn::Conv2d conv{nullptr};
  } odd;
  try {
    CountFlops(odd, [&](OpTracer& t) { t.conv2d(*odd.conv, in); }, in);
    FAIL() << "expected UnsupportedLayerError";
  } catch (const UnsupportedLayerError& e) {
    EXPECT_NE(std::string(e.what()).find("drop"), std::string::npos);
  }
}

ModelConfig Base(int64_t base, bool gpm) {
  ModelConfig c;
  c.backbone.base_channels = base;
  c.use_gpm = gpm;
  return c;
}

TEST(ProfileTest, BreakdownSumsToTotals) {
  auto model = MakeModel(Base(8, true), 0);
  const auto r = Profile(*model, {1, 3, 64, 64}, "tiny", 2);
  int64_t params = 0, flops = 0;
  for (const auto& g : r.breakdown) {
    params += g.params;
    flops += g.flops;
  }
  EXPECT_EQ(params, r.params);
  EXPECT_EQ(flops, r.flops);
  int64_t direct = 0;
  for (const auto& p : model->parameters()) direct += p.numel();
  EXPECT_EQ(r.params, direct);
}

TEST(ProfileTest, ChainAddsCostAndWideningGrowsIt) {
  const Shape4 in{1, 3, 64, 64};
  int64_t prev_params = 0, prev_flops = 0;
  for (int64_t base : {4, 8, 16}) {
    auto plain = MakeModel(Base(base, false), 0);
    auto full = MakeModel(Base(base, true), 0);
    const auto p = Profile(*plain, in, "plain");
    const auto f = Profile(*full, in, "full");
    EXPECT_GT(f.params, p.params);
    EXPECT_GT(f.flops, p.flops);
    // Additivity: the backbone part of the full model is the plain model.
    const auto backbone_only = CountParams(*full->backbone);
    EXPECT_EQ(backbone_only.params, p.params);
    EXPECT_GT(p.params, prev_params);
    EXPECT_GT(p.flops, prev_flops);
    prev_params = p.params;
    prev_flops = p.flops;
  }
}

TEST(ProfileTest, FlopsScaleWithInputArea) {
  auto model = MakeModel(Base(4, false), 0);
  const auto small = CountFlops(*model, {1, 3, 32, 32});
  const auto large = CountFlops(*model, {1, 3, 64, 64});
  EXPECT_EQ(large.flops, 4 * small.flops);
  const auto batch = CountFlops(*model, {2, 3, 32, 32});
  EXPECT_EQ(batch.flops, 2 * small.flops);
}

TEST(GroupKeyTest, TruncatesDottedPaths) {
  EXPECT_EQ(GroupKey("gpm.stages.2.sca", 2), "gpm.stages");
  EXPECT_EQ(GroupKey("backbone", 2), "backbone");
  EXPECT_EQ(GroupKey("a.b.c", 1), "a");
}

TEST(ComplexityOutputTest, CsvAndTableFormats) {
  ComplexityReport r{.model = "U-Net", .input = {1, 3, 256, 256},
                     .params = 31'040'000, .flops = 48'230'000'000};
  std::vector<ComplexityReport> rows{r};
  std::ostringstream csv;
  WriteComplexityCsv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
            "Model,Input size,Params(M),FLOPs(G)");
  EXPECT_NE(csv.str().find("U-Net,3x256x256,31.04"), std::string::npos);
  std::ostringstream table;
  WriteComplexityTable(table, rows);
  EXPECT_EQ(table.str().rfind("# FLOPs: 2 per multiply-accumulate", 0), 0u);
}

}  // namespace
}  // namespace gpmseg
