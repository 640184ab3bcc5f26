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

#ifndef GPMSEG_DATASET_H_
#define GPMSEG_DATASET_H_

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace gpmseg {

// One (image, depth, mask) triplet at training resolution.
struct Sample {
  std::string id;
  torch::Tensor image;  // (3, H, W) float32 in [0, 1]
  torch::Tensor depth;  // (1, H, W) float32 in [0, 1]
  torch::Tensor mask;   // (1, H, W) float32 in {0, 1}
};

using Dataset = std::vector<Sample>;

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path depth;
  std::filesystem::path mask;
};

// Reads a tab-separated "image<TAB>depth<TAB>mask" manifest. Blank lines and
// lines starting with '#' are skipped. Relative paths resolve against
// data_root when non-empty, otherwise against the manifest's directory.
// A malformed line raises DataError with its line number.
std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& manifest,
                                        const std::filesystem::path& data_root);

// $GPMSEG_DATA_ROOT, or empty.
std::filesystem::path DataRootFromEnv();

// Loads every entry at size x size. A missing or unreadable file raises
// DataError naming it. Masks are thresholded at half their maximum value.
Dataset LoadDataset(const std::vector<ManifestEntry>& entries, int64_t size);

// Synthetic polyp-like triplets. Each sample has a tunnel depth background
// with one or two elliptical protrusions (the polyps, marked in the mask)
// and low-contrast decoy blobs that share the polyps' colour shift but not
// their geometry. Deterministic per (count, size, seed).
Dataset MakeSyntheticDataset(int64_t count, int64_t size, uint64_t seed);

// Writes <id>_image.png (8-bit RGB), <id>_depth.png (16-bit) and
// <id>_mask.png into dir plus a "manifest.tsv" with relative paths, and
// returns the manifest path.
std::filesystem::path WriteDataset(const Dataset& data,
                                   const std::filesystem::path& dir);

// Deterministic id-hash split; a sample goes to validation when
// Fnv1a64(id) % 10000 < val_fraction * 10000.
std::pair<Dataset, Dataset> SplitByIdHash(const Dataset& data,
                                          double val_fraction);

struct Batch {
  torch::Tensor image;  // (B, 3, H, W)
  torch::Tensor depth;  // (B, 1, H, W)
  torch::Tensor mask;   // (B, 1, H, W)
};

Batch Collate(const std::vector<const Sample*>& samples);

struct AugmentOptions {
  bool flips = true;
  bool rotations = true;
  double brightness = 0.1;  // additive, uniform in [-b, b]
  double contrast = 0.1;    // multiplicative about the mean, [1-c, 1+c]
};

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns
  double brightness = 0.0;
  double contrast = 1.0;
};

AugmentDraw DrawAugment(std::mt19937_64& rng, const AugmentOptions& options);

// Geometric ops hit image, depth and mask identically; photometric jitter
// touches the image only.
Sample ApplyAugment(const Sample& sample, const AugmentDraw& draw);

inline Sample Augment(const Sample& sample, std::mt19937_64& rng,
                      const AugmentOptions& options = {}) {
  return ApplyAugment(sample, DrawAugment(rng, options));
}

}  // namespace gpmseg

#endif  // GPMSEG_DATASET_H_
