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

#include "gpmseg/op_tracer.h"

#include <numeric>
#include <variant>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

int64_t OutputExtent(int64_t in, int64_t kernel, int64_t stride,
                     int64_t padding, int64_t dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

template <typename Options>
std::array<int64_t, 2> ExplicitPadding(const Options& options) {
  const auto* padding =
      std::get_if<torch::ExpandingArray<2>>(&options.padding());
  if (padding == nullptr) {
    throw UnsupportedLayerError(
        "conv2d with symbolic padding mode has no cost formula");
  }
  return {(*padding)->at(0), (*padding)->at(1)};
}

}  // namespace

Shape4 Shape4::of(const torch::Tensor& t) {
  if (t.dim() != 4) {
    throw InvalidInputError("expected a rank-4 tensor, got rank " +
                            std::to_string(t.dim()));
  }
  return {t.size(0), t.size(1), t.size(2), t.size(3)};
}

std::ostream& operator<<(std::ostream& os, const Shape4& s) {
  return os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
}

OpTracer::Scope::Scope(OpTracer& tracer, std::string_view name)
    : tracer_(tracer) {
  tracer_.scopes_.emplace_back(name);
}

OpTracer::Scope::~Scope() { tracer_.scopes_.pop_back(); }

std::string OpTracer::current_scope() const {
  std::string out;
  for (const auto& s : scopes_) {
    if (s.empty()) continue;
    if (!out.empty()) out += '.';
    out += s;
  }
  return out;
}

void OpTracer::record(std::string_view kind, int64_t flops) {
  records_.push_back({current_scope(), std::string(kind), flops});
}

Shape4 OpTracer::conv2d(const torch::nn::Conv2dImpl& layer, const Shape4& in) {
  const auto& opt = layer.options;
  if (in.c != opt.in_channels()) {
    throw InvalidInputError("conv2d trace: channel mismatch");
  }
  const auto pad = ExplicitPadding(opt);
  const auto& k = opt.kernel_size();
  const auto& s = opt.stride();
  const auto& d = opt.dilation();
  Shape4 out{in.n, opt.out_channels(),
             OutputExtent(in.h, k->at(0), s->at(0), pad[0], d->at(0)),
             OutputExtent(in.w, k->at(1), s->at(1), pad[1], d->at(1))};
  const int64_t macs_per_output =
      (opt.in_channels() / opt.groups()) * k->at(0) * k->at(1);
  record("conv2d", 2 * out.numel() * macs_per_output);
  visited_.insert(&layer);
  return out;
}

Shape4 OpTracer::conv_transpose2d(const torch::nn::ConvTranspose2dImpl& layer,
                                  const Shape4& in) {
  const auto& opt = layer.options;
  if (in.c != opt.in_channels()) {
    throw InvalidInputError("conv_transpose2d trace: channel mismatch");
  }
  const auto& k = opt.kernel_size();
  const auto& s = opt.stride();
  const auto* padding = std::get_if<torch::ExpandingArray<2>>(&opt.padding());
  if (padding == nullptr) {
    throw UnsupportedLayerError("conv_transpose2d trace: symbolic padding");
  }
  const auto& p = *padding;
  const auto& op = opt.output_padding();
  const auto& d = opt.dilation();
  auto extent = [&](int64_t x, int i) {
    return (x - 1) * s->at(i) - 2 * p->at(i) + d->at(i) * (k->at(i) - 1) +
           op->at(i) + 1;
  };
  Shape4 out{in.n, opt.out_channels(), extent(in.h, 0), extent(in.w, 1)};
  // Every input element scatters into a k*k patch of every output channel.
  record("conv_transpose2d", 2 * in.numel() *
                                 (opt.out_channels() / opt.groups()) *
                                 k->at(0) * k->at(1));
  visited_.insert(&layer);
  return out;
}

Shape4 OpTracer::batch_norm(const torch::nn::BatchNorm2dImpl& layer,
                            const Shape4& in) {
  record("batch_norm", in.numel());
  visited_.insert(&layer);
  return in;
}

int64_t OpTracer::linear(const torch::nn::LinearImpl& layer, int64_t rows) {
  record("linear",
         2 * rows * layer.options.in_features() * layer.options.out_features());
  visited_.insert(&layer);
  return layer.options.out_features();
}

void OpTracer::matmul(int64_t batch, int64_t m, int64_t k, int64_t n) {
  record("matmul", 2 * batch * m * k * n);
}

void OpTracer::elementwise(std::string_view kind, int64_t elements) {
  record(kind, elements);
}

int64_t OpTracer::total_flops() const {
  return std::accumulate(
      records_.begin(), records_.end(), int64_t{0},
      [](int64_t acc, const OpRecord& r) { return acc + r.flops; });
}

}  // namespace gpmseg
