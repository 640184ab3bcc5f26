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

#ifndef GPMSEG_CHECKPOINT_H_
#define GPMSEG_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace gpmseg {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

// Named parameter/buffer arrays plus a JSON manifest. The manifest always
// carries "format_version".
//
// On-disk layout (little-endian):
//   "GPMCKPT\0" | u32 format_version | u32 manifest_bytes | manifest JSON
//   u32 tensor_count | per tensor: u16 name_len, name, u8 dtype, u8 rank,
//   i64 dims[rank], raw element data
struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

// Deep copy of every parameter and buffer of `module`.
Checkpoint Snapshot(const torch::nn::Module& module, nlohmann::json manifest);

// Copies checkpoint tensors into `module`; every name and shape must match.
void Restore(torch::nn::Module& module, const Checkpoint& checkpoint);

std::string Serialize(const Checkpoint& checkpoint);
Checkpoint Deserialize(const std::string& bytes);

// Atomic write: temp file in the same directory, then rename.
void WriteCheckpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint);
Checkpoint ReadCheckpoint(const std::filesystem::path& path);

// 64-bit FNV-1a of the serialized checkpoint, as 16 hex digits.
std::string CheckpointDigest(const Checkpoint& checkpoint);

}  // namespace gpmseg

#endif  // GPMSEG_CHECKPOINT_H_
