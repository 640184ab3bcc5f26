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

#ifndef GPMSEG_COMPLEXITY_H_
#define GPMSEG_COMPLEXITY_H_

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "gpmseg/backbone.h"
#include "gpmseg/op_tracer.h"

namespace gpmseg {

struct ModuleCost {
  std::string name;  // dotted module path truncated to the grouping depth
  int64_t params = 0;
  int64_t flops = 0;
};

struct ComplexityReport {
  std::string model;
  Shape4 input;
  int64_t params = 0;
  int64_t flops = 0;
  std::vector<ModuleCost> breakdown;  // sums to (params, flops) exactly

  double params_millions() const { return static_cast<double>(params) / 1e6; }
  double flops_giga() const { return static_cast<double>(flops) / 1e9; }
};

// First `depth` dot-separated components of a parameter or scope path.
std::string GroupKey(const std::string& path, int depth);

// Learnable scalars of module, grouped by GroupKey of the owning module.
ComplexityReport CountParams(const torch::nn::Module& module,
                             int group_depth = 2);

using TraceFn = std::function<void(OpTracer&)>;

// Runs trace and accounts its FLOPs against root. Every leaf layer of root
// must be a Conv2d, ConvTranspose2d, BatchNorm2d or Linear, and must have
// been costed by the trace; otherwise UnsupportedLayerError lists the
// offending layers.
ComplexityReport CountFlops(const torch::nn::Module& root, const TraceFn& trace,
                            const Shape4& input, int group_depth = 2);

ComplexityReport CountFlops(const SegmentationNetImpl& model,
                            const Shape4& input, int group_depth = 2);

// Parameters and FLOPs together, merged per group.
ComplexityReport Profile(const SegmentationNetImpl& model, const Shape4& input,
                         std::string name, int group_depth = 2);

// Aligned table with a header line stating the FLOP convention, then one
// row per report and, when with_breakdown is set, its per-module rows.
void WriteComplexityTable(std::ostream& os,
                          std::span<const ComplexityReport> reports,
                          bool with_breakdown = false);

// "Model,Input size,Params(M),FLOPs(G)" with input size as CxHxW.
void WriteComplexityCsv(std::ostream& os,
                        std::span<const ComplexityReport> reports);

}  // namespace gpmseg

#endif  // GPMSEG_COMPLEXITY_H_
