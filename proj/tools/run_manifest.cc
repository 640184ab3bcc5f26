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

#include "run_manifest.h"

#include <chrono>
#include <ctime>
#include <fstream>

#include "gpmseg/errors.h"

#ifndef GPMSEG_VERSION
#define GPMSEG_VERSION "unknown"
#endif

namespace gpmseg::cli {
namespace {

std::string FormatUtc(const char* format) {
  const auto now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), format, &tm);
  return buf;
}

}  // namespace

std::string CodeVersion() { return std::string("gpmseg ") + GPMSEG_VERSION; }

std::string UtcTimestamp() { return FormatUtc("%Y-%m-%dT%H:%M:%SZ"); }

std::filesystem::path MakeRunDir(const std::filesystem::path& root,
                                 uint64_t seed) {
  const auto stem = FormatUtc("%Y%m%dT%H%M%SZ") + "-seed" + std::to_string(seed);
  auto dir = root / stem;
  for (int n = 1; std::filesystem::exists(dir); ++n) {
    dir = root / (stem + "-" + std::to_string(n));
  }
  std::filesystem::create_directories(dir);
  return dir;
}

RunManifest::RunManifest(std::string command, const TrainConfig& config,
                         std::filesystem::path run_dir)
    : run_dir_(std::move(run_dir)) {
  json_["command"] = std::move(command);
  json_["config"] = ToKeyValues(config);
  json_["seeds"] = config.seeds;
  json_["code_version"] = CodeVersion();
  json_["output_dir"] = run_dir_.string();
  json_["started_at"] = UtcTimestamp();
  json_["finished_at"] = nullptr;
  json_["status"] = "running";
  json_["results"] = nlohmann::json::object();
  Write();
}

RunManifest::~RunManifest() {
  if (finalized_) return;
  try {
    Finalize(1, "command exited without finalizing its run manifest");
  } catch (...) {
  }
}

void RunManifest::Finalize(int exit_code, const std::string& error) {
  json_["finished_at"] = UtcTimestamp();
  json_["exit_code"] = exit_code;
  json_["status"] = exit_code == 0 ? "ok" : "failed";
  if (!error.empty()) json_["error"] = error;
  finalized_ = true;
  Write();
}

void RunManifest::Write() const {
  const auto target = path();
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << json_.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, target);
}

std::vector<std::string> OverridesFromManifest(
    const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) {
    throw ConfigError("from_manifest",
                      "cannot open run manifest " + manifest.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("from_manifest", std::string("bad run manifest: ") +
                                           e.what());
  }
  if (!j.contains("config") || !j["config"].is_object()) {
    throw ConfigError("from_manifest", "run manifest has no config object");
  }
  std::vector<std::string> out;
  for (const auto& [key, value] : j["config"].items()) {
    out.push_back(key + "=" + value.get<std::string>());
  }
  return out;
}

}  // namespace gpmseg::cli
