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

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

bool IsCostedLayer(const torch::nn::Module& m) {
  return dynamic_cast<const torch::nn::Conv2dImpl*>(&m) ||
         dynamic_cast<const torch::nn::ConvTranspose2dImpl*>(&m) ||
         dynamic_cast<const torch::nn::BatchNorm2dImpl*>(&m) ||
         dynamic_cast<const torch::nn::LinearImpl*>(&m);
}

bool IsEmptyContainer(const torch::nn::Module& m) {
  return m.parameters(/*recurse=*/false).empty() &&
         m.buffers(/*recurse=*/false).empty();
}

std::vector<ModuleCost> ToBreakdown(
    const std::map<std::string, ModuleCost>& groups) {
  std::vector<ModuleCost> out;
  out.reserve(groups.size());
  for (const auto& [name, cost] : groups) out.push_back(cost);
  return out;
}

std::string ParentPath(const std::string& param_path) {
  const auto dot = param_path.rfind('.');
  return dot == std::string::npos ? std::string() : param_path.substr(0, dot);
}

}  // namespace

std::string GroupKey(const std::string& path, int depth) {
  if (path.empty()) return "(root)";
  size_t pos = 0;
  for (int i = 0; i < depth; ++i) {
    pos = path.find('.', pos);
    if (pos == std::string::npos) return path;
    ++pos;
  }
  return path.substr(0, pos - 1);
}

ComplexityReport CountParams(const torch::nn::Module& module,
                             int group_depth) {
  ComplexityReport report;
  report.model = module.name();
  std::map<std::string, ModuleCost> groups;
  for (const auto& p : module.named_parameters()) {
    if (!p.value().requires_grad()) continue;
    const auto key = GroupKey(ParentPath(p.key()), group_depth);
    auto& g = groups[key];
    g.name = key;
    g.params += p.value().numel();
    report.params += p.value().numel();
  }
  report.breakdown = ToBreakdown(groups);
  return report;
}

ComplexityReport CountFlops(const torch::nn::Module& root, const TraceFn& trace,
                            const Shape4& input, int group_depth) {
  OpTracer tracer;
  trace(tracer);

  std::vector<std::string> unsupported;
  for (const auto& item : root.named_modules("", /*include_self=*/false)) {
    const auto& m = *item.value();
    if (!m.children().empty()) continue;
    if (IsCostedLayer(m)) {
      if (!tracer.visited().contains(&m)) {
        unsupported.push_back(item.key() + " (" + m.name() + ", not traced)");
      }
    } else if (!IsEmptyContainer(m) ||
               m.name().find("ModuleList") == std::string::npos) {
      unsupported.push_back(item.key() + " (" + m.name() + ")");
    }
  }
  if (!unsupported.empty()) {
    std::string msg = "no FLOP formula for:";
    for (const auto& u : unsupported) msg += " " + u + ";";
    throw UnsupportedLayerError(msg);
  }

  ComplexityReport report;
  report.model = root.name();
  report.input = input;
  std::map<std::string, ModuleCost> groups;
  for (const auto& r : tracer.records()) {
    const auto key = GroupKey(r.scope, group_depth);
    auto& g = groups[key];
    g.name = key;
    g.flops += r.flops;
    report.flops += r.flops;
  }
  report.breakdown = ToBreakdown(groups);
  return report;
}

ComplexityReport CountFlops(const SegmentationNetImpl& model,
                            const Shape4& input, int group_depth) {
  return CountFlops(
      model, [&](OpTracer& tracer) { model.trace(tracer, input); }, input,
      group_depth);
}

ComplexityReport Profile(const SegmentationNetImpl& model, const Shape4& input,
                         std::string name, int group_depth) {
  const auto params = CountParams(model, group_depth);
  const auto flops = CountFlops(model, input, group_depth);
  std::map<std::string, ModuleCost> groups;
  for (const auto& c : params.breakdown) {
    groups[c.name].name = c.name;
    groups[c.name].params += c.params;
  }
  for (const auto& c : flops.breakdown) {
    groups[c.name].name = c.name;
    groups[c.name].flops += c.flops;
  }
  ComplexityReport report;
  report.model = std::move(name);
  report.input = input;
  report.params = params.params;
  report.flops = flops.flops;
  report.breakdown = ToBreakdown(groups);
  return report;
}

void WriteComplexityTable(std::ostream& os,
                          std::span<const ComplexityReport> reports,
                          bool with_breakdown) {
  os << "# FLOPs: 2 per multiply-accumulate (conv, linear, matmul); 1 per "
        "element for pooling, activation, normalization, resampling, "
        "elementwise ops\n";
  size_t width = 12;
  for (const auto& r : reports) {
    width = std::max(width, r.model.size());
    if (with_breakdown) {
      for (const auto& c : r.breakdown) width = std::max(width, c.name.size() + 2);
    }
  }
  auto row = [&](const std::string& name, const std::string& input,
                 double params_m, double flops_g) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << name
       << std::setw(14) << input << std::right << std::fixed
       << std::setprecision(4) << std::setw(12) << params_m << std::setw(12)
       << flops_g << '\n';
  };
  os << std::left << std::setw(static_cast<int>(width) + 2) << "Model"
     << std::setw(14) << "Input size" << std::right << std::setw(12)
     << "Params(M)" << std::setw(12) << "FLOPs(G)" << '\n';
  for (const auto& r : reports) {
    std::ostringstream input;
    input << r.input.c << 'x' << r.input.h << 'x' << r.input.w;
    row(r.model, input.str(), r.params_millions(), r.flops_giga());
    if (!with_breakdown) continue;
    for (const auto& c : r.breakdown) {
      row("  " + c.name, "", static_cast<double>(c.params) / 1e6,
          static_cast<double>(c.flops) / 1e9);
    }
  }
  os.unsetf(std::ios::floatfield);
}

void WriteComplexityCsv(std::ostream& os,
                        std::span<const ComplexityReport> reports) {
  os << "Model,Input size,Params(M),FLOPs(G)\n";
  for (const auto& r : reports) {
    os << r.model << ',' << r.input.c << 'x' << r.input.h << 'x' << r.input.w
       << ',' << std::fixed << std::setprecision(4) << r.params_millions()
       << ',' << r.flops_giga() << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace gpmseg
