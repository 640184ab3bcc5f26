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

#ifndef GPMSEG_OP_TRACER_H_
#define GPMSEG_OP_TRACER_H_

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <torch/torch.h>

namespace gpmseg {

// Static NCHW shape used by the analytic cost walk.
struct Shape4 {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t tokens() const { return h * w; }
  bool operator==(const Shape4&) const = default;

  static Shape4 of(const torch::Tensor& t);
};

std::ostream& operator<<(std::ostream& os, const Shape4& s);

// One costed operation recorded during a trace.
struct OpRecord {
  std::string scope;  // dotted module path, e.g. "gpm.stages.2"
  std::string kind;   // "conv2d", "matmul", "softmax", ...
  int64_t flops = 0;
};

// Accumulates FLOPs while a model walks its forward graph on shapes only.
//
// Convention: 2 FLOPs per multiply-accumulate for convolutions, linear maps
// and matrix products; 1 FLOP per element for pooling, activations,
// normalization, resampling and elementwise arithmetic. Bias additions are
// folded into the MAC count.
class OpTracer {
 public:
  class Scope {
   public:
    Scope(OpTracer& tracer, std::string_view name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    OpTracer& tracer_;
  };

  Scope scope(std::string_view name) { return Scope(*this, name); }

  Shape4 conv2d(const torch::nn::Conv2dImpl& layer, const Shape4& in);
  Shape4 conv_transpose2d(const torch::nn::ConvTranspose2dImpl& layer,
                          const Shape4& in);
  Shape4 batch_norm(const torch::nn::BatchNorm2dImpl& layer, const Shape4& in);
  // Linear layer applied to an (n, in_features) batch of descriptors.
  int64_t linear(const torch::nn::LinearImpl& layer, int64_t rows);

  // Batched (m x k) * (k x n) product.
  void matmul(int64_t batch, int64_t m, int64_t k, int64_t n);
  // Elementwise / pooling / activation work at 1 FLOP per element.
  void elementwise(std::string_view kind, int64_t elements);

  const std::vector<OpRecord>& records() const { return records_; }
  const std::unordered_set<const torch::nn::Module*>& visited() const {
    return visited_;
  }
  int64_t total_flops() const;
  std::string current_scope() const;

 private:
  void record(std::string_view kind, int64_t flops);

  std::vector<std::string> scopes_;
  std::vector<OpRecord> records_;
  std::unordered_set<const torch::nn::Module*> visited_;
};

}  // namespace gpmseg

#endif  // GPMSEG_OP_TRACER_H_
