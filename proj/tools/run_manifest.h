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

#ifndef GPMSEG_TOOLS_RUN_MANIFEST_H_
#define GPMSEG_TOOLS_RUN_MANIFEST_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpmseg/train_config.h"

namespace gpmseg::cli {

// "gpmseg <version>".
std::string CodeVersion();

// UTC timestamp, ISO 8601 with seconds.
std::string UtcTimestamp();

// Creates <root>/<YYYYmmddTHHMMSSZ>-seed<seed>, adding "-<n>" if taken.
std::filesystem::path MakeRunDir(const std::filesystem::path& root,
                                 uint64_t seed);

// run_manifest.json of one command invocation. The file is written when the
// object is created and rewritten by Finalize; if Finalize never runs, the
// destructor records the run as failed.
class RunManifest {
 public:
  RunManifest(std::string command, const TrainConfig& config,
              std::filesystem::path run_dir);
  ~RunManifest();
  RunManifest(const RunManifest&) = delete;
  RunManifest& operator=(const RunManifest&) = delete;

  const std::filesystem::path& run_dir() const { return run_dir_; }
  std::filesystem::path path() const { return run_dir_ / "run_manifest.json"; }

  // Free-form result fields, flushed on Finalize.
  nlohmann::json& results() { return json_["results"]; }

  void Finalize(int exit_code, const std::string& error = {});

 private:
  void Write() const;

  std::filesystem::path run_dir_;
  nlohmann::json json_;
  bool finalized_ = false;
};

// Config stored in a run manifest, as key/value overrides.
std::vector<std::string> OverridesFromManifest(
    const std::filesystem::path& manifest);

}  // namespace gpmseg::cli

#endif  // GPMSEG_TOOLS_RUN_MANIFEST_H_
