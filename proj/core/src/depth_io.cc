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

#include "gpmseg/depth_io.h"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "gpmseg/errors.h"
#include "gpmseg/resample.h"

namespace gpmseg {
namespace {

constexpr char kRangeKey[] = "gpmseg:range_mm";
constexpr char kRawMagic[4] = {'G', 'P', 'M', 'D'};

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct RawMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> values;
  std::optional<DepthRange> encoded_range;  // PNG text chunk, if any
  double full_scale = 0.0;                  // max count for encoded ranges
};

bool HasRawMagic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::memcmp(magic, kRawMagic, 4) == 0;
}

RawMap ReadRaw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open depth file " + path.string());
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char*>(header), 8) ||
      std::memcmp(header, kRawMagic, 4) != 0) {
    throw DataError(path.string() + ": missing GPMD header");
  }
  RawMap map;
  map.height = header[4] | (header[5] << 8);
  map.width = header[6] | (header[7] << 8);
  if (map.height == 0 || map.width == 0) {
    throw DataError(path.string() + ": zero-sized depth map");
  }
  const auto n = static_cast<size_t>(map.height * map.width);
  std::vector<unsigned char> payload(n * 4);
  if (!in.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size()))) {
    throw DataError(path.string() + ": truncated GPMD payload");
  }
  map.values.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bits = uint32_t{payload[4 * i]} |
                          (uint32_t{payload[4 * i + 1]} << 8) |
                          (uint32_t{payload[4 * i + 2]} << 16) |
                          (uint32_t{payload[4 * i + 3]} << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    map.values[i] = v;
  }
  return map;
}

RawMap ReadPng(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open depth file " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + ": not a PNG or GPMD depth file");
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  RawMap map;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  std::string error;
  int bit_depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  bit_depth = png_get_bit_depth(png, info);
  if ((color_type & PNG_COLOR_MASK_COLOR) != 0) {
    error = "depth PNG must be grayscale";
  } else {
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if ((color_type & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    map.height = png_get_image_height(png, info);
    map.width = png_get_image_width(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * map.height);
    rows.resize(map.height);
    for (int64_t y = 0; y < map.height; ++y) {
      rows[y] = pixels.data() + y * stride;
    }
    png_read_image(png, rows.data());
    png_read_end(png, info);
    png_textp text = nullptr;
    int num_text = 0;
    png_get_text(png, info, &text, &num_text);
    for (int i = 0; i < num_text; ++i) {
      if (std::strcmp(text[i].key, kRangeKey) != 0) continue;
      std::istringstream is(text[i].text);
      DepthRange r;
      if (is >> r.min >> r.max) map.encoded_range = r;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!error.empty()) throw DataError(path.string() + ": " + error);

  const size_t n = static_cast<size_t>(map.height * map.width);
  map.values.resize(n);
  if (bit_depth == 16) {
    for (size_t i = 0; i < n; ++i) {
      uint16_t v;
      std::memcpy(&v, pixels.data() + 2 * i, 2);
      map.values[i] = v;
    }
    map.full_scale = 65535.0;
  } else {
    for (size_t i = 0; i < n; ++i) map.values[i] = pixels[i];
    map.full_scale = 255.0;
  }
  return map;
}

torch::Tensor ToDepthTensor(const std::vector<double>& v, int64_t h,
                            int64_t w) {
  auto t = torch::empty({1, 1, h, w}, torch::kFloat32);
  auto* out = t.data_ptr<float>();
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return t;
}

std::vector<double> ToDoubles(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const double* p = c.data_ptr<double>();
  return {p, p + c.numel()};
}

std::pair<int64_t, int64_t> PlaneSize(const torch::Tensor& depth) {
  if (depth.dim() == 2) return {depth.size(0), depth.size(1)};
  if (depth.dim() == 4 && depth.size(0) == 1 && depth.size(1) == 1) {
    return {depth.size(2), depth.size(3)};
  }
  throw InvalidInputError("depth map must be (H, W) or (1, 1, H, W)");
}

}  // namespace

DepthRecord LoadDepth(const std::filesystem::path& path, int64_t height,
                      int64_t width) {
  if (!std::filesystem::exists(path)) {
    throw IoError("depth file not found: " + path.string());
  }
  RawMap map = HasRawMagic(path) ? ReadRaw(path) : ReadPng(path);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : map.values) {
    if (std::isnan(v)) throw DataError(path.string() + ": NaN depth value");
    if (v < 0) throw DataError(path.string() + ": negative depth value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  DepthRecord record;
  record.image_id = path.stem().string();
  record.source = DepthSource::kFile;
  if (map.encoded_range) {
    const auto& r = *map.encoded_range;
    const double scale = (r.max - r.min) / map.full_scale;
    record.original_range_mm = DepthRange{r.min + lo * scale, r.min + hi * scale};
  } else {
    record.original_range_mm = DepthRange{lo, hi};
  }

  const double span = hi - lo;
  for (double& v : map.values) v = span > 0 ? (v - lo) / span : 0.0;
  auto depth = ToDepthTensor(map.values, map.height, map.width);
  if (height > 0 && width > 0) {
    depth = ResizeBilinear(depth, height, width).clamp(0.0, 1.0);
  }
  record.depth = depth.contiguous();
  return record;
}

void SaveDepthPng16(const std::filesystem::path& path,
                    const torch::Tensor& depth,
                    const std::optional<DepthRange>& range_mm) {
  const auto [h, w] = PlaneSize(depth);
  const auto values = ToDoubles(depth);
  std::vector<uint16_t> counts(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    counts[i] = static_cast<uint16_t>(std::lround(v * 65535.0));
  }

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write depth file " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  std::string range_text;
  std::vector<png_bytep> rows(h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_text text{};
  if (range_mm) {
    std::ostringstream os;
    os.precision(17);
    os << range_mm->min << ' ' << range_mm->max;
    range_text = os.str();
    text.compression = PNG_TEXT_COMPRESSION_NONE;
    text.key = const_cast<char*>(kRangeKey);
    text.text = range_text.data();
    png_set_text(png, info, &text, 1);
  }
  png_write_info(png, info);
  png_set_swap(png);
  for (int64_t y = 0; y < h; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(counts.data() + y * w);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void SaveDepthRaw(const std::filesystem::path& path,
                  const torch::Tensor& depth) {
  const auto [h, w] = PlaneSize(depth);
  if (h > 0xFFFF || w > 0xFFFF) {
    throw InvalidInputError("GPMD maps are limited to 65535 x 65535");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write depth file " + path.string());
  const unsigned char header[8] = {
      'G', 'P', 'M', 'D',
      static_cast<unsigned char>(h & 0xFF), static_cast<unsigned char>(h >> 8),
      static_cast<unsigned char>(w & 0xFF), static_cast<unsigned char>(w >> 8)};
  out.write(reinterpret_cast<const char*>(header), 8);
  for (double v : ToDoubles(depth)) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const unsigned char le[4] = {
        static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
        static_cast<unsigned char>(bits >> 16),
        static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
  }
  if (!out) throw IoError("short write to " + path.string());
}

double TunnelProfile(int64_t y, int64_t x, int64_t height, int64_t width) {
  const double u = (x + 0.5) / static_cast<double>(width) - 0.5;
  const double v = (y + 0.5) / static_cast<double>(height) - 0.5;
  const double rho2 = (u * u + v * v) / 0.5;
  return std::exp(-3.0 * rho2);
}

DepthRecord SynthDepth(int64_t height, int64_t width, uint64_t seed) {
  if (height <= 0 || width <= 0) {
    throw InvalidInputError("synth_depth: dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.0, kSynthNoiseBound / 3.0);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Wave {
    double a, fx, fy, phi;
  };
  Wave waves[3];
  for (auto& wv : waves) wv = {amp(rng), freq(rng), freq(rng), phase(rng)};

  std::vector<double> values(static_cast<size_t>(height * width));
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      const double u = (x + 0.5) / static_cast<double>(width);
      const double v = (y + 0.5) / static_cast<double>(height);
      double d = TunnelProfile(y, x, height, width);
      for (const auto& wv : waves) {
        d += wv.a * std::sin(2.0 * std::numbers::pi * (wv.fx * u + wv.fy * v) +
                             wv.phi);
      }
      values[y * width + x] = d;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  const double span = hi - lo;
  for (double& d : values) d = span > 0 ? (d - lo) / span : 0.0;

  DepthRecord record;
  record.image_id = "synthetic-" + std::to_string(seed);
  record.depth = ToDepthTensor(values, height, width);
  record.source = DepthSource::kSynthetic;
  return record;
}

DepthMetrics ComputeDepthMetrics(const torch::Tensor& pred,
                                 const torch::Tensor& gt,
                                 const torch::Tensor& valid_mask,
                                 const std::optional<DepthRange>& range_mm) {
  if (!pred.defined() || !gt.defined() || pred.sizes() != gt.sizes()) {
    throw InvalidInputError("depth_metrics: prediction and ground truth "
                            "must have equal shapes");
  }
  if (valid_mask.defined() && valid_mask.numel() != gt.numel()) {
    throw InvalidInputError("depth_metrics: mask size differs from depth size");
  }
  const auto p = ToDoubles(pred);
  const auto g = ToDoubles(gt);
  std::vector<double> m;
  if (valid_mask.defined()) m = ToDoubles(valid_mask);

  const double offset = range_mm ? range_mm->min : 0.0;
  const double scale = range_mm ? range_mm->max - range_mm->min : 1.0;

  int64_t n = 0;
  int64_t within[3] = {0, 0, 0};
  double abs_rel = 0.0;
  double sq = 0.0;
  double log_err = 0.0;
  for (size_t i = 0; i < g.size(); ++i) {
    if (!m.empty() && m[i] == 0.0) continue;
    const double gv = offset + g[i] * scale;
    if (!(gv > 0.0)) continue;
    const double pv = offset + p[i] * scale;
    const double ps = std::max(pv, kMinPredictedDepth);
    const double ratio = std::max(ps / gv, gv / ps);
    if (ratio < 1.25) ++within[0];
    if (ratio < 1.25 * 1.25) ++within[1];
    if (ratio < 1.25 * 1.25 * 1.25) ++within[2];
    abs_rel += std::abs(pv - gv) / gv;
    sq += (pv - gv) * (pv - gv);
    log_err += std::abs(std::log10(ps) - std::log10(gv));
    ++n;
  }
  if (n == 0) {
    throw UndefinedMetricError("depth_metrics: no valid pixel (empty mask or "
                               "non-positive ground truth)");
  }
  const double count = static_cast<double>(n);
  DepthMetrics out;
  out.delta1 = within[0] / count;
  out.delta2 = within[1] / count;
  out.delta3 = within[2] / count;
  out.abs_rel = abs_rel / count;
  out.rmse = std::sqrt(sq / count);
  out.log10 = log_err / count;
  out.metric_units = range_mm.has_value();
  out.valid_pixels = n;
  return out;
}

}  // namespace gpmseg
