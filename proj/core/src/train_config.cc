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

#include "gpmseg/train_config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "gpmseg/errors.h"

namespace gpmseg {
namespace {

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void Bad(const std::string& key, const std::string& value,
                      const std::string& expected) {
  throw ConfigError(key, "config key '" + key + "': cannot use '" + value +
                             "' (expected " + expected + ")");
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    Bad(key, value, std::is_integral_v<T> ? "an integer" : "a number");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  Bad(key, value, "true or false");
}

// Shortest text that parses back to the same double.
std::string FormatDouble(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

using Setter = std::function<void(TrainConfig&, const std::string&,
                                  const std::string&)>;

const std::map<std::string, Setter>& Setters() {
  static const std::map<std::string, Setter> setters = {
      {"lr", [](auto& c, auto& k, auto& v) { c.lr = ParseNumber<double>(k, v); }},
      {"weight_decay",
       [](auto& c, auto& k, auto& v) {
         c.weight_decay = ParseNumber<double>(k, v);
       }},
      {"batch_size",
       [](auto& c, auto& k, auto& v) {
         c.batch_size = ParseNumber<int64_t>(k, v);
       }},
      {"epochs",
       [](auto& c, auto& k, auto& v) { c.epochs = ParseNumber<int64_t>(k, v); }},
      {"t_max",
       [](auto& c, auto& k, auto& v) { c.t_max = ParseNumber<int64_t>(k, v); }},
      {"lr_min",
       [](auto& c, auto& k, auto& v) { c.lr_min = ParseNumber<double>(k, v); }},
      {"image_size",
       [](auto& c, auto& k, auto& v) {
         c.image_size = ParseNumber<int64_t>(k, v);
       }},
      {"seeds",
       [](auto& c, auto& k, auto& v) {
         std::vector<uint64_t> seeds;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           seeds.push_back(ParseNumber<uint64_t>(k, Trim(item)));
         }
         if (seeds.empty()) Bad(k, v, "a comma-separated list of seeds");
         c.seeds = std::move(seeds);
       }},
      {"loss",
       [](auto& c, auto& k, auto& v) {
         try {
           c.loss = ParseLossKind(v);
         } catch (const InvalidInputError&) {
           Bad(k, v, "dice_bce, dice or bce");
         }
       }},
      {"early_stop_patience",
       [](auto& c, auto& k, auto& v) {
         if (v == "none" || v.empty()) {
           c.early_stop_patience.reset();
         } else {
           c.early_stop_patience = ParseNumber<int64_t>(k, v);
         }
       }},
      {"base_channels",
       [](auto& c, auto& k, auto& v) {
         c.base_channels = ParseNumber<int64_t>(k, v);
       }},
      {"use_gpm",
       [](auto& c, auto& k, auto& v) { c.use_gpm = ParseBool(k, v); }},
      {"ordering",
       [](auto& c, auto& k, auto& v) {
         try {
           c.ordering = ParseGpmOrdering(v);
         } catch (const InvalidInputError&) {
           Bad(k, v, "bottom_to_top or top_to_bottom");
         }
       }},
      {"similarity_scaling",
       [](auto& c, auto& k, auto& v) {
         try {
           c.similarity_scaling = ParseSimilarityScaling(v);
         } catch (const InvalidInputError&) {
           Bad(k, v, "channels or tokens");
         }
       }},
      {"train_manifest",
       [](auto& c, auto&, auto& v) { c.train_manifest = v; }},
      {"val_manifest", [](auto& c, auto&, auto& v) { c.val_manifest = v; }},
      {"synthetic_samples",
       [](auto& c, auto& k, auto& v) {
         c.synthetic_samples = ParseNumber<int64_t>(k, v);
       }},
      {"synthetic_seed",
       [](auto& c, auto& k, auto& v) {
         c.synthetic_seed = ParseNumber<uint64_t>(k, v);
       }},
      {"val_fraction",
       [](auto& c, auto& k, auto& v) {
         c.val_fraction = ParseNumber<double>(k, v);
       }},
      {"augment",
       [](auto& c, auto& k, auto& v) { c.augment = ParseBool(k, v); }},
      {"threads",
       [](auto& c, auto& k, auto& v) { c.threads = ParseNumber<int64_t>(k, v); }},
      {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
  };
  return setters;
}

}  // namespace

std::string_view ToString(LossKind kind) {
  switch (kind) {
    case LossKind::kDiceBce:
      return "dice_bce";
    case LossKind::kDice:
      return "dice";
    case LossKind::kBce:
      return "bce";
  }
  return "dice_bce";
}

LossKind ParseLossKind(std::string_view text) {
  if (text == "dice_bce") return LossKind::kDiceBce;
  if (text == "dice") return LossKind::kDice;
  if (text == "bce") return LossKind::kBce;
  throw InvalidInputError("unknown loss '" + std::string(text) + "'");
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.backbone.base_channels = base_channels;
  m.use_gpm = use_gpm;
  m.ordering = ordering;
  m.scaling = similarity_scaling;
  return m;
}

void TrainConfig::Validate() const {
  auto require = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, std::string("config key '") + key + "': " + what);
  };
  require(lr > 0, "lr", "must be positive");
  require(lr_min >= 0 && lr_min < lr, "lr_min", "must satisfy 0 <= lr_min < lr");
  require(weight_decay >= 0, "weight_decay", "must be non-negative");
  require(batch_size > 0, "batch_size", "must be positive");
  require(epochs > 0, "epochs", "must be positive");
  require(t_max > 0 && t_max <= epochs, "t_max", "must satisfy 0 < t_max <= epochs");
  require(image_size > 0 && image_size % 16 == 0, "image_size",
          "must be a positive multiple of 16");
  // The deepest skip sits at image_size / 16 and its depth stream at half that.
  require(!use_gpm || image_size % 32 == 0, "image_size",
          "must be a multiple of 32 when use_gpm is set");
  require(!seeds.empty(), "seeds", "must list at least one seed");
  require(!early_stop_patience || *early_stop_patience > 0,
          "early_stop_patience", "must be positive or none");
  require(base_channels > 0, "base_channels", "must be positive");
  require(synthetic_samples >= 0, "synthetic_samples", "must be non-negative");
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction",
          "must lie in [0, 1)");
  require(threads > 0, "threads", "must be positive");
}

void SetValue(TrainConfig& config, const std::string& key,
              const std::string& value) {
  const auto& setters = Setters();
  auto it = setters.find(key);
  if (it == setters.end()) {
    throw ConfigError(key, "unknown config key '" + key + "'");
  }
  it->second(config, key, value);
}

void ApplyOverride(TrainConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    const auto key = Trim(assignment);
    throw ConfigError(key, "override '" + std::string(assignment) +
                               "' is not of the form key=value");
  }
  SetValue(config, Trim(assignment.substr(0, eq)),
           Trim(assignment.substr(eq + 1)));
}

TrainConfig ParseConfig(std::istream& in) {
  TrainConfig config;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (Trim(line).empty()) continue;
    ApplyOverride(config, line);
  }
  return config;
}

TrainConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return ParseConfig(in);
}

std::map<std::string, std::string> ToKeyValues(const TrainConfig& c) {
  std::string seeds;
  for (size_t i = 0; i < c.seeds.size(); ++i) {
    if (i) seeds += ",";
    seeds += std::to_string(c.seeds[i]);
  }
  return {
      {"lr", FormatDouble(c.lr)},
      {"weight_decay", FormatDouble(c.weight_decay)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"t_max", std::to_string(c.t_max)},
      {"lr_min", FormatDouble(c.lr_min)},
      {"image_size", std::to_string(c.image_size)},
      {"seeds", seeds},
      {"loss", std::string(ToString(c.loss))},
      {"early_stop_patience", c.early_stop_patience
                                  ? std::to_string(*c.early_stop_patience)
                                  : "none"},
      {"base_channels", std::to_string(c.base_channels)},
      {"use_gpm", c.use_gpm ? "true" : "false"},
      {"ordering", std::string(ToString(c.ordering))},
      {"similarity_scaling", std::string(ToString(c.similarity_scaling))},
      {"train_manifest", c.train_manifest},
      {"val_manifest", c.val_manifest},
      {"synthetic_samples", std::to_string(c.synthetic_samples)},
      {"synthetic_seed", std::to_string(c.synthetic_seed)},
      {"val_fraction", FormatDouble(c.val_fraction)},
      {"augment", c.augment ? "true" : "false"},
      {"threads", std::to_string(c.threads)},
      {"output_dir", c.output_dir},
  };
}

}  // namespace gpmseg
