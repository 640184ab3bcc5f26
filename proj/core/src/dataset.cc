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

#include "gpmseg/dataset.h"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gpmseg/depth_io.h"
#include "gpmseg/errors.h"
#include "gpmseg/hash.h"

namespace gpmseg {
namespace {

std::filesystem::path Resolve(const std::string& field,
                              const std::filesystem::path& base) {
  std::filesystem::path p(field);
  return p.is_absolute() ? p : base / p;
}

void RequireFile(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) {
    throw DataError("missing data file: " + p.string());
  }
}

torch::Tensor ReadImage(const std::filesystem::path& path, int64_t size) {
  RequireFile(path);
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("unreadable image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::resize(rgb, rgb, cv::Size(static_cast<int>(size), static_cast<int>(size)),
             0, 0, cv::INTER_LINEAR);
  auto t = torch::from_blob(rgb.data, {size, size, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

torch::Tensor ReadMask(const std::filesystem::path& path, int64_t size) {
  RequireFile(path);
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw DataError("unreadable mask: " + path.string());
  double max_value = 0.0;
  cv::minMaxLoc(gray, nullptr, &max_value);
  cv::resize(gray, gray,
             cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0,
             cv::INTER_NEAREST);
  auto t = torch::from_blob(gray.data, {1, size, size}, torch::kUInt8)
               .to(torch::kFloat32);
  if (max_value <= 0.0) return torch::zeros_like(t);
  return (t > max_value / 2.0).to(torch::kFloat32);
}

struct Ellipse {
  double cy, cx, ra, rb, theta;
};

Ellipse DrawEllipse(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> centre(lo, hi);
  std::uniform_real_distribution<double> radius(0.08, 0.18);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  Ellipse e;
  e.cy = centre(rng);
  e.cx = centre(rng);
  e.ra = radius(rng);
  e.rb = radius(rng);
  e.theta = angle(rng);
  return e;
}

// Squared elliptical radius of every pixel centre, (H, W) float64.
torch::Tensor EllipseRadius2(const Ellipse& e, const torch::Tensor& yy,
                             const torch::Tensor& xx) {
  auto dy = yy - e.cy;
  auto dx = xx - e.cx;
  const double c = std::cos(e.theta);
  const double s = std::sin(e.theta);
  auto u = (dx * c + dy * s) / e.ra;
  auto v = (-dx * s + dy * c) / e.rb;
  return u * u + v * v;
}

torch::Tensor Normalize01(const torch::Tensor& t) {
  const auto lo = t.min();
  const auto range = t.max() - lo;
  if (range.item<double>() <= 0.0) return torch::zeros_like(t);
  return (t - lo) / range;
}

}  // namespace

std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& manifest,
                                        const std::filesystem::path& data_root) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base =
      data_root.empty() ? manifest.parent_path() : data_root;
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) +
                      ": expected image<TAB>depth<TAB>mask");
    }
    entries.push_back({Resolve(fields[0], base), Resolve(fields[1], base),
                       Resolve(fields[2], base)});
  }
  return entries;
}

std::filesystem::path DataRootFromEnv() {
  const char* root = std::getenv("GPMSEG_DATA_ROOT");
  return root ? std::filesystem::path(root) : std::filesystem::path();
}

Dataset LoadDataset(const std::vector<ManifestEntry>& entries, int64_t size) {
  Dataset data;
  data.reserve(entries.size());
  for (const auto& e : entries) {
    Sample s;
    s.id = e.image.stem().string();
    if (s.id.ends_with("_image")) s.id.resize(s.id.size() - 6);
    s.image = ReadImage(e.image, size);
    RequireFile(e.depth);
    s.depth = LoadDepth(e.depth, size, size).depth.squeeze(0);
    s.mask = ReadMask(e.mask, size);
    data.push_back(std::move(s));
  }
  return data;
}

Dataset MakeSyntheticDataset(int64_t count, int64_t size, uint64_t seed) {
  if (count < 0 || size <= 0) {
    throw InvalidInputError("synthetic dataset needs count >= 0, size > 0");
  }
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto axis = (torch::arange(size, opts) + 0.5) / static_cast<double>(size);
  auto grid = torch::meshgrid({axis, axis}, "ij");
  const auto& yy = grid[0];
  const auto& xx = grid[1];

  Dataset data;
  data.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t sample_seed =
        Fnv1a64(std::to_string(seed) + ":" + std::to_string(i));
    std::mt19937_64 rng(sample_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto tunnel = SynthDepth(size, size, sample_seed).depth[0][0].to(
        torch::kFloat64);
    auto depth = tunnel.clone();
    auto mask = torch::zeros({size, size}, opts);
    auto tint = torch::zeros({size, size}, opts);

    const int polyps = unit(rng) < 0.3 ? 2 : 1;
    for (int k = 0; k < polyps; ++k) {
      const auto e = DrawEllipse(rng, 0.25, 0.75);
      auto r2 = EllipseRadius2(e, yy, xx);
      // Protrusion toward the camera: a dome that lowers depth.
      depth = depth - 0.4 * (1.0 - r2).clamp_min(0.0).sqrt();
      mask = torch::maximum(mask, (r2 < 1.0).to(torch::kFloat64));
      tint = tint + torch::exp(-r2 * 2.0);
    }
    // Decoys: same colour shift, flat geometry, no mask.
    for (int k = 0; k < 2; ++k) {
      const auto e = DrawEllipse(rng, 0.15, 0.85);
      tint = tint + torch::exp(-EllipseRadius2(e, yy, xx) * 2.0);
    }
    depth = Normalize01(depth);

    // Shading follows the tunnel only; the polyps appear through the tint
    // shared with decoys and through faint depth-linked specular texture.
    auto shade = 0.45 + 0.5 * (1.0 - tunnel);
    auto noise = torch::empty({3, size, size}, opts);
    std::normal_distribution<double> gauss(0.0, 0.04);
    auto noise_acc = noise.accessor<double, 3>();
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t y = 0; y < size; ++y) {
        for (int64_t x = 0; x < size; ++x) noise_acc[c][y][x] = gauss(rng);
      }
    }
    const double base_rgb[3] = {0.85, 0.45, 0.40};
    const double tint_rgb[3] = {0.06, 0.05, 0.02};
    std::vector<torch::Tensor> channels;
    for (int c = 0; c < 3; ++c) {
      channels.push_back(shade * (base_rgb[c] + tint_rgb[c] * tint) +
                         0.03 * (1.0 - depth) * mask + noise[c]);
    }
    Sample s;
    s.id = "synthetic-" + std::to_string(seed) + "-" + std::to_string(i);
    s.image = torch::stack(channels).clamp(0.0, 1.0).to(torch::kFloat32);
    s.depth = depth.unsqueeze(0).to(torch::kFloat32);
    s.mask = mask.unsqueeze(0).to(torch::kFloat32);
    data.push_back(std::move(s));
  }
  return data;
}

std::filesystem::path WriteDataset(const Dataset& data,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest_path = dir / "manifest.tsv";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot write " + manifest_path.string());
  for (const auto& s : data) {
    const auto image_name = s.id + "_image.png";
    const auto depth_name = s.id + "_depth.png";
    const auto mask_name = s.id + "_mask.png";

    auto rgb = (s.image.clamp(0.0, 1.0) * 255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
    cv::Mat rgb_mat(static_cast<int>(rgb.size(0)), static_cast<int>(rgb.size(1)),
                    CV_8UC3, rgb.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb_mat, bgr, cv::COLOR_RGB2BGR);
    auto mask = (s.mask[0] > 0.5).to(torch::kUInt8).mul(255).contiguous();
    cv::Mat mask_mat(static_cast<int>(mask.size(0)),
                     static_cast<int>(mask.size(1)), CV_8UC1, mask.data_ptr());
    if (!cv::imwrite((dir / image_name).string(), bgr) ||
        !cv::imwrite((dir / mask_name).string(), mask_mat)) {
      throw IoError("cannot write images for " + s.id + " under " +
                    dir.string());
    }
    SaveDepthPng16(dir / depth_name, s.depth.unsqueeze(0));
    manifest << image_name << '\t' << depth_name << '\t' << mask_name << '\n';
  }
  if (!manifest) throw IoError("short write to " + manifest_path.string());
  return manifest_path;
}

std::pair<Dataset, Dataset> SplitByIdHash(const Dataset& data,
                                          double val_fraction) {
  const auto cut = static_cast<uint64_t>(val_fraction * 10000.0);
  std::pair<Dataset, Dataset> out;
  for (const auto& s : data) {
    (Fnv1a64(s.id) % 10000 < cut ? out.second : out.first).push_back(s);
  }
  return out;
}

Batch Collate(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw InvalidInputError("cannot collate an empty batch");
  std::vector<torch::Tensor> images, depths, masks;
  for (const auto* s : samples) {
    images.push_back(s->image);
    depths.push_back(s->depth);
    masks.push_back(s->mask);
  }
  return {torch::stack(images), torch::stack(depths), torch::stack(masks)};
}

AugmentDraw DrawAugment(std::mt19937_64& rng, const AugmentOptions& options) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  if (options.flips) {
    d.hflip = unit(rng) < 0.5;
    d.vflip = unit(rng) < 0.5;
  }
  if (options.rotations) {
    d.rot90 = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
  }
  if (options.brightness > 0) {
    d.brightness = (2.0 * unit(rng) - 1.0) * options.brightness;
  }
  if (options.contrast > 0) {
    d.contrast = 1.0 + (2.0 * unit(rng) - 1.0) * options.contrast;
  }
  return d;
}

Sample ApplyAugment(const Sample& sample, const AugmentDraw& draw) {
  auto geo = [&](torch::Tensor t) {
    if (draw.hflip) t = t.flip({2});
    if (draw.vflip) t = t.flip({1});
    if (draw.rot90 % 4 != 0) t = t.rot90(draw.rot90, {1, 2});
    return t.contiguous();
  };
  Sample out;
  out.id = sample.id;
  out.depth = geo(sample.depth);
  out.mask = geo(sample.mask);
  auto image = geo(sample.image);
  if (draw.contrast != 1.0 || draw.brightness != 0.0) {
    const auto mean = image.mean();
    image = ((image - mean) * draw.contrast + mean + draw.brightness)
                .clamp(0.0, 1.0);
  }
  out.image = image;
  return out;
}

}  // namespace gpmseg
