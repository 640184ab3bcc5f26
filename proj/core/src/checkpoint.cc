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

#include "gpmseg/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "gpmseg/errors.h"
#include "gpmseg/hash.h"

namespace gpmseg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint tensor payloads are written in host byte order");

constexpr char kMagic[8] = {'G', 'P', 'M', 'C', 'K', 'P', 'T', '\0'};

enum class DType : uint8_t { kFloat32 = 0, kFloat64 = 1, kInt64 = 2 };

DType ToDType(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32:
      return DType::kFloat32;
    case torch::kFloat64:
      return DType::kFloat64;
    case torch::kInt64:
      return DType::kInt64;
    default:
      throw CheckpointError(std::string("unsupported tensor dtype ") +
                            c10::toString(t));
  }
}

torch::ScalarType FromDType(uint8_t d) {
  switch (static_cast<DType>(d)) {
    case DType::kFloat32:
      return torch::kFloat32;
    case DType::kFloat64:
      return torch::kFloat64;
    case DType::kInt64:
      return torch::kInt64;
  }
  throw CheckpointError("unknown dtype tag " + std::to_string(d));
}

template <typename T>
void Put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T Get() {
    T value;
    std::memcpy(&value, Take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* Take(size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError("checkpoint truncated at byte " +
                            std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

Checkpoint Snapshot(const torch::nn::Module& module, nlohmann::json manifest) {
  manifest["format_version"] = kCheckpointFormatVersion;
  Checkpoint ckpt{std::move(manifest), {}};
  torch::NoGradGuard no_grad;
  for (const auto& p : module.named_parameters()) {
    ckpt.tensors.emplace_back(p.key(), p.value().detach().clone());
  }
  for (const auto& b : module.named_buffers()) {
    ckpt.tensors.emplace_back(b.key(), b.value().detach().clone());
  }
  return ckpt;
}

void Restore(torch::nn::Module& module, const Checkpoint& checkpoint) {
  std::unordered_map<std::string, torch::Tensor> targets;
  for (auto& p : module.named_parameters()) targets[p.key()] = p.value();
  for (auto& b : module.named_buffers()) targets[b.key()] = b.value();
  if (targets.size() != checkpoint.tensors.size()) {
    throw CheckpointError("checkpoint holds " +
                          std::to_string(checkpoint.tensors.size()) +
                          " tensors, model expects " +
                          std::to_string(targets.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& [name, value] : checkpoint.tensors) {
    auto it = targets.find(name);
    if (it == targets.end()) {
      throw CheckpointError("checkpoint tensor '" + name +
                            "' has no counterpart in the model");
    }
    if (it->second.sizes() != value.sizes()) {
      throw CheckpointError("checkpoint tensor '" + name + "' shape mismatch");
    }
    it->second.copy_(value);
  }
}

std::string Serialize(const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  Put<uint32_t>(out, kCheckpointFormatVersion);
  const std::string manifest = checkpoint.manifest.dump();
  Put<uint32_t>(out, static_cast<uint32_t>(manifest.size()));
  out += manifest;
  Put<uint32_t>(out, static_cast<uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    Put<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    auto t = tensor.contiguous().cpu();
    Put<uint8_t>(out, static_cast<uint8_t>(ToDType(t.scalar_type())));
    Put<uint8_t>(out, static_cast<uint8_t>(t.dim()));
    for (int64_t d : t.sizes()) Put<int64_t>(out, d);
    out.append(static_cast<const char*>(t.data_ptr()), t.nbytes());
  }
  return out;
}

Checkpoint Deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.Take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a gpmseg checkpoint (bad magic)");
  }
  const auto version = r.Get<uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format version " +
                          std::to_string(version) + " is not supported (" +
                          std::to_string(kCheckpointFormatVersion) +
                          " expected)");
  }
  Checkpoint ckpt;
  const auto manifest_len = r.Get<uint32_t>();
  const char* manifest = r.Take(manifest_len);
  try {
    ckpt.manifest = nlohmann::json::parse(manifest, manifest + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") +
                          e.what());
  }
  if (ckpt.manifest.value("format_version", 0u) != version) {
    throw CheckpointError("manifest format_version disagrees with header");
  }
  const auto count = r.Get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.Get<uint16_t>();
    std::string name(r.Take(name_len), name_len);
    const auto dtype = FromDType(r.Get<uint8_t>());
    const auto rank = r.Get<uint8_t>();
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = r.Get<int64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    std::memcpy(t.data_ptr(), r.Take(t.nbytes()), t.nbytes());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

void WriteCheckpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint) {
  const auto bytes = Serialize(checkpoint);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move " + tmp.string() + " to " + path.string() +
                  ": " + ec.message());
  }
}

Checkpoint ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return Deserialize(buf.str());
}

std::string CheckpointDigest(const Checkpoint& checkpoint) {
  return HexDigest(Fnv1a64(Serialize(checkpoint)));
}

}  // namespace gpmseg
