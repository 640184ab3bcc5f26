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

// Forward-pass timings on CPU. Run with OMP_NUM_THREADS pinned for stable
// numbers; the sizes mirror a 256x256 input with base width 16.
#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "gpmseg/attention.h"
#include "gpmseg/backbone.h"
#include "gpmseg/complexity.h"
#include "gpmseg/gpm.h"

namespace gpmseg {
namespace {

void BM_ScaUnit(benchmark::State& state) {
  const int64_t c = state.range(0), hw = state.range(1);
  torch::manual_seed(0);
  ScaUnit sca(c);
  sca->eval();
  torch::NoGradGuard no_grad;
  const auto x = torch::randn({1, c, hw, hw});
  for (auto _ : state) benchmark::DoNotOptimize(sca->forward(x));
  state.SetItemsProcessed(state.iterations() * hw * hw);
}
BENCHMARK(BM_ScaUnit)->Args({16, 128})->Args({64, 32})->Args({128, 16});

void BM_GpmStage(benchmark::State& state) {
  const int64_t c = state.range(0), hw = state.range(1);
  torch::manual_seed(0);
  GpmStage stage(GpmStageOptions{.feature_channels = c});
  stage->eval();
  torch::NoGradGuard no_grad;
  const auto f = torch::randn({1, c, hw, hw});
  const auto d = torch::randn({1, std::max<int64_t>(1, c / 2), hw / 2, hw / 2});
  for (auto _ : state) benchmark::DoNotOptimize(stage->forward(f, d).features);
  // N = H*W tokens, so the similarity matrix dominates as hw grows.
  state.counters["tokens"] = static_cast<double>(hw * hw);
}
BENCHMARK(BM_GpmStage)->Args({16, 32})->Args({16, 64})->Args({32, 32})
    ->Args({64, 16});

void BM_Model(benchmark::State& state) {
  ModelConfig config;
  config.backbone.base_channels = 16;
  config.use_gpm = state.range(0) != 0;
  const int64_t hw = state.range(1);
  auto model = MakeModel(config, 0);
  model->eval();
  torch::NoGradGuard no_grad;
  const auto image = torch::randn({1, 3, hw, hw});
  const auto depth = torch::rand({1, 1, hw, hw});
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(image, depth));
  state.counters["GFLOPs"] =
      static_cast<double>(CountFlops(*model, {1, 3, hw, hw}).flops) / 1e9;
}
BENCHMARK(BM_Model)->ArgNames({"gpm", "hw"})->Args({0, 128})->Args({1, 128})
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig config;
  config.backbone.base_channels = 8;
  config.use_gpm = state.range(0) != 0;
  auto model = MakeModel(config, 0);
  model->train();
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(1e-3));
  const auto image = torch::randn({4, 3, 64, 64});
  const auto depth = torch::rand({4, 1, 64, 64});
  const auto mask = (torch::rand({4, 1, 64, 64}) > 0.5).to(torch::kFloat);
  for (auto _ : state) {
    opt.zero_grad();
    auto loss = torch::binary_cross_entropy_with_logits(model->forward(image, depth), mask);
    loss.backward();
    opt.step();
  }
}
BENCHMARK(BM_TrainStep)->ArgNames({"gpm"})->Arg(0)->Arg(1)
    ->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace gpmseg

BENCHMARK_MAIN();
