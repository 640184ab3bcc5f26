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

#include "cli.h"

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "gpmseg/checkpoint.h"
#include "gpmseg/complexity.h"
#include "gpmseg/dataset.h"
#include "gpmseg/depth_io.h"
#include "gpmseg/errors.h"
#include "gpmseg/metrics.h"
#include "gpmseg/train.h"
#include "gpmseg/train_config.h"
#include "run_manifest.h"

namespace gpmseg::cli {
namespace {

namespace fs = std::filesystem;

// Reference GPM parameter overhead (millions) for a base-64 U-Net.
constexpr double kReferenceGpmParamsM = 0.54;

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string from_manifest;
};

void AddConfigOptions(CLI::App& cmd, ConfigOptions& opts) {
  cmd.add_option("--config", opts.config_path, "key = value config file");
  cmd.add_option("--set", opts.sets, "override, key=value (repeatable)")
      ->take_all();
  cmd.add_option("--from-manifest", opts.from_manifest,
                 "reuse the resolved config of an earlier run_manifest.json");
}

TrainConfig ResolveConfig(const ConfigOptions& opts) {
  TrainConfig config;
  if (!opts.config_path.empty()) {
    try {
      config = LoadConfig(opts.config_path);
    } catch (const IoError& e) {
      throw ConfigError("config", e.what());
    }
  }
  if (!opts.from_manifest.empty()) {
    for (const auto& kv : OverridesFromManifest(opts.from_manifest)) {
      ApplyOverride(config, kv);
    }
  }
  for (const auto& kv : opts.sets) ApplyOverride(config, kv);
  config.Validate();
  torch::set_num_threads(static_cast<int>(config.threads));
  return config;
}

TrainConfig ConfigFromCheckpoint(const Checkpoint& ckpt) {
  TrainConfig config;
  if (ckpt.manifest.contains("train")) {
    for (const auto& [key, value] : ckpt.manifest["train"].items()) {
      SetValue(config, key, value.get<std::string>());
    }
  }
  return config;
}

std::string MethodName(bool use_gpm, GpmOrdering ordering) {
  if (!use_gpm) return "U-Net";
  return ordering == GpmOrdering::kBottomToTop ? "U-Net w/ 4 GPMs-Bottom"
                                               : "U-Net w/ 4 GPMs-Top";
}

Dataset LoadManifestData(const fs::path& manifest, int64_t size) {
  auto entries = ReadManifest(manifest, DataRootFromEnv());
  if (entries.empty()) {
    throw DataError("manifest " + manifest.string() + " lists no samples");
  }
  return LoadDataset(entries, size);
}

struct Split {
  Dataset train;
  Dataset val;
};

Split LoadTrainingData(const TrainConfig& config) {
  Dataset all;
  if (!config.train_manifest.empty()) {
    all = LoadManifestData(config.train_manifest, config.image_size);
    if (!config.val_manifest.empty()) {
      return {std::move(all),
              LoadManifestData(config.val_manifest, config.image_size)};
    }
  } else if (config.synthetic_samples > 0) {
    all = MakeSyntheticDataset(config.synthetic_samples, config.image_size,
                               config.synthetic_seed);
  } else {
    throw ConfigError("train_manifest",
                      "config key 'train_manifest': no training data (set "
                      "train_manifest or synthetic_samples)");
  }
  auto [train, val] = SplitByIdHash(all, config.val_fraction);
  if (train.empty()) throw DataError("validation split left no training data");
  return {std::move(train), std::move(val)};
}

Checkpoint ReadCheckpointOrThrow(const fs::path& path) {
  try {
    return ReadCheckpoint(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

struct SeedRun {
  TrainResult result;
  fs::path checkpoint_path;
};

SeedRun TrainSeed(const TrainConfig& config, uint64_t seed, const Split& data,
                  const fs::path& dir, std::ostream& out) {
  fs::create_directories(dir);
  std::ofstream log(dir / "train_log.csv");
  log << "epoch,lr,train_loss,val_dsc\n";
  TrainHooks hooks;
  hooks.log = &log;
  auto model = MakeModel(config.model_config(), seed);
  SeedRun run;
  run.result = TrainRun(config, model, data.train, data.val, seed, hooks);
  run.checkpoint_path = dir / "model.gpmckpt";
  WriteCheckpoint(run.checkpoint_path, run.result.checkpoint);
  const auto& h = run.result.state.history;
  out << "seed " << seed << ": " << h.size() << " epochs, final loss "
      << (h.empty() ? NAN : h.back().train_loss) << ", best val DSC "
      << run.result.state.best_val_dsc << " -> " << run.checkpoint_path.string()
      << '\n';
  return run;
}

int Classify(std::exception_ptr ep, std::string& message) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    message = std::string("config error: ") + e.what();
    return kExitConfig;
  } catch (const DataError& e) {
    message = std::string("data error: ") + e.what();
    return kExitData;
  } catch (const IoError& e) {
    message = std::string("data error: ") + e.what();
    return kExitData;
  } catch (const CheckpointError& e) {
    message = std::string("checkpoint error: ") + e.what();
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    message = std::string("error: ") + e.what();
    return kExitFailure;
  }
}

// Runs body, then finalizes the manifest with the matching exit code.
template <typename Body>
int Finish(RunManifest& manifest, Body body) {
  try {
    body();
  } catch (...) {
    std::string message;
    manifest.Finalize(Classify(std::current_exception(), message), message);
    throw;
  }
  manifest.Finalize(kExitOk);
  return kExitOk;
}

int CmdTrain(const ConfigOptions& opts, std::ostream& out) {
  const auto config = ResolveConfig(opts);
  RunManifest manifest("train", config,
                       MakeRunDir(config.output_dir, config.seeds.front()));
  out << "run directory: " << manifest.run_dir().string() << '\n';
  return Finish(manifest, [&] {
    const auto data = LoadTrainingData(config);
    manifest.results()["train_samples"] = data.train.size();
    manifest.results()["val_samples"] = data.val.size();
    for (uint64_t seed : config.seeds) {
      const auto run = TrainSeed(config, seed, data,
                                 manifest.run_dir() / ("seed_" + std::to_string(seed)),
                                 out);
      const auto& state = run.result.state;
      manifest.results()["seeds"][std::to_string(seed)] = {
          {"checkpoint", run.checkpoint_path.string()},
          {"checkpoint_digest", CheckpointDigest(run.result.checkpoint)},
          {"epoch0_loss", state.history.front().train_loss},
          {"epochs_run", state.epoch},
          {"best_epoch", state.best_epoch},
          {"best_val_dsc", state.best_val_dsc},
      };
    }
  });
}

struct EvalOptions {
  std::vector<std::string> checkpoints;
  std::vector<std::string> datasets;
  std::string method;
  std::string output_dir = "runs";
  int64_t batch_size = 8;
};

int CmdEval(const EvalOptions& opts, std::ostream& out) {
  std::vector<Checkpoint> ckpts;
  try {
    for (const auto& p : opts.checkpoints) {
      ckpts.push_back(ReadCheckpointOrThrow(p));
    }
  } catch (const CheckpointError& e) {
    TrainConfig unknown;
    unknown.seeds = {0};
    RunManifest failed("eval", unknown, MakeRunDir(opts.output_dir, 0));
    failed.Finalize(kExitCheckpoint, std::string("checkpoint error: ") + e.what());
    throw;
  }
  TrainConfig config = ConfigFromCheckpoint(ckpts.front());
  std::vector<uint64_t> seeds;
  for (const auto& c : ckpts) seeds.push_back(c.manifest.value("seed", 0ull));
  config.seeds = seeds;
  torch::set_num_threads(static_cast<int>(config.threads));

  RunManifest manifest("eval", config, MakeRunDir(opts.output_dir, seeds.front()));
  return Finish(manifest, [&] {
    std::vector<SegmentationNet> models;
    for (const auto& c : ckpts) models.push_back(ModelFromCheckpoint(c));
    const auto& model_config = models.front()->config();
    const auto method =
        opts.method.empty()
            ? MethodName(model_config.use_gpm, model_config.ordering)
            : opts.method;

    std::vector<SummaryRow> rows;
    for (const auto& spec : opts.datasets) {
      std::string name;
      fs::path path;
      if (auto eq = spec.find('='); eq != std::string::npos) {
        name = spec.substr(0, eq);
        path = spec.substr(eq + 1);
      } else {
        path = spec;
        name = path.stem().string();
      }
      const auto data = LoadManifestData(path, config.image_size);
      std::vector<SegScores> per_seed;
      for (size_t i = 0; i < models.size(); ++i) {
        auto scores = Evaluate(models[i], data, opts.batch_size);
        std::ofstream report(manifest.run_dir() /
                             (name + "_seed" + std::to_string(seeds[i]) + ".txt"));
        WriteSeedReport(report, name, method, seeds[i], scores);
        per_seed.push_back(std::move(scores));
      }
      const auto agg = Aggregate(per_seed);
      rows.push_back({name, method, agg.mean_dsc, agg.mean_iou});
      manifest.results()["datasets"][name] = {{"samples", data.size()},
                                              {"mean_dsc", agg.mean_dsc},
                                              {"mean_iou", agg.mean_iou}};
    }
    std::ofstream csv(manifest.run_dir() / "summary.csv");
    WriteSummaryCsv(csv, rows);
    WriteSummaryCsv(out, rows);
  });
}

struct Arm {
  std::string method;
  std::string slug;
  bool use_gpm;
  GpmOrdering ordering;
};

int CmdAblate(const ConfigOptions& opts, std::ostream& out) {
  const auto config = ResolveConfig(opts);
  RunManifest manifest("ablate", config,
                       MakeRunDir(config.output_dir, config.seeds.front()));
  out << "run directory: " << manifest.run_dir().string() << '\n';
  return Finish(manifest, [&] {
    const auto data = LoadTrainingData(config);
    if (data.val.empty()) {
      throw DataError("ablation needs a non-empty validation split");
    }
    const std::vector<Arm> arms = {
        {"U-Net", "baseline", false, GpmOrdering::kBottomToTop},
        {MethodName(true, GpmOrdering::kBottomToTop), "gpm_bottom", true,
         GpmOrdering::kBottomToTop},
        {MethodName(true, GpmOrdering::kTopToBottom), "gpm_top", true,
         GpmOrdering::kTopToBottom},
    };
    std::ostringstream table;
    table << "method,DSC,IoU\n" << std::fixed << std::setprecision(2);
    for (const auto& arm : arms) {
      auto arm_config = config;
      arm_config.use_gpm = arm.use_gpm;
      arm_config.ordering = arm.ordering;
      const auto arm_dir = manifest.run_dir() / arm.slug;
      fs::create_directories(arm_dir);
      std::ofstream(arm_dir / "config.json")
          << nlohmann::json(ToKeyValues(arm_config)).dump(2) << '\n';

      std::vector<SegScores> per_seed;
      for (uint64_t seed : arm_config.seeds) {
        const auto run = TrainSeed(arm_config, seed, data,
                                   arm_dir / ("seed_" + std::to_string(seed)),
                                   out);
        auto best = ModelFromCheckpoint(run.result.checkpoint);
        per_seed.push_back(Evaluate(best, data.val));
      }
      const auto agg = Aggregate(per_seed);
      table << arm.method << ',' << agg.mean_dsc * 100.0 << ','
            << agg.mean_iou * 100.0 << '\n';
      auto& r = manifest.results()["arms"][arm.slug];
      r["method"] = arm.method;
      r["mean_dsc"] = agg.mean_dsc;
      r["mean_iou"] = agg.mean_iou;
      for (const auto& s : per_seed) r["per_seed_dsc"].push_back(s.dsc);
    }
    std::ofstream(manifest.run_dir() / "ablation.csv") << table.str();
    out << table.str();
  });
}

int CmdComplexity(const ConfigOptions& opts, bool breakdown, std::ostream& out) {
  const auto config = ResolveConfig(opts);
  RunManifest manifest("complexity", config,
                       MakeRunDir(config.output_dir, config.seeds.front()));
  return Finish(manifest, [&] {
    auto plain_config = config.model_config();
    plain_config.use_gpm = false;
    auto gpm_config = config.model_config();
    gpm_config.use_gpm = true;
    const Shape4 input{1, 3, config.image_size, config.image_size};
    const std::vector<ComplexityReport> reports = {
        Profile(*MakeModel(plain_config, 0), input, "U-Net"),
        Profile(*MakeModel(gpm_config, 0), input,
                MethodName(true, gpm_config.ordering)),
    };
    WriteComplexityTable(out, reports, breakdown);
    std::ofstream csv(manifest.run_dir() / "complexity.csv");
    WriteComplexityCsv(csv, reports);

    const int64_t delta = reports[1].params - reports[0].params;
    const double delta_m = static_cast<double>(delta) / 1e6;
    out << std::fixed << std::setprecision(4) << "GPM chain parameters: +"
        << delta_m << "M, FLOPs: +"
        << (reports[1].flops_giga() - reports[0].flops_giga()) << "G\n";
    auto& r = manifest.results();
    r["params_plain"] = reports[0].params;
    r["params_gpm"] = reports[1].params;
    r["flops_plain"] = reports[0].flops;
    r["flops_gpm"] = reports[1].flops;
    r["gpm_param_delta"] = delta;
    if (config.base_channels == 64) {
      const double rel = (delta_m - kReferenceGpmParamsM) / kReferenceGpmParamsM;
      out << "reference overhead " << kReferenceGpmParamsM
          << "M, relative difference " << std::setprecision(1) << rel * 100.0
          << "%\n";
      r["gpm_param_delta_reference_m"] = kReferenceGpmParamsM;
      r["gpm_param_delta_relative"] = rel;
      if (std::abs(rel) > 0.25) {
        out << "note: each stage carries a depth stream of max(1, C/2) "
               "channels with 1x1 projections C/2<->C; the count scales with "
               "that width choice\n";
      }
    }
    out.unsetf(std::ios::floatfield);
  });
}

struct DepthMetricsOptions {
  std::string pred;
  std::string gt;
  std::string mask;
  std::string output_dir = "runs";
};

torch::Tensor ToMillimetres(const DepthRecord& r) {
  if (!r.original_range_mm) return r.depth;
  const auto& range = *r.original_range_mm;
  return r.depth * (range.max - range.min) + range.min;
}

int CmdDepthMetrics(const DepthMetricsOptions& opts, std::ostream& out) {
  TrainConfig config;
  config.seeds = {0};
  RunManifest manifest("depth-metrics", config, MakeRunDir(opts.output_dir, 0));
  return Finish(manifest, [&] {
    const auto gt = LoadDepth(opts.gt);
    const auto h = gt.depth.size(2);
    const auto w = gt.depth.size(3);
    const auto pred = LoadDepth(opts.pred, h, w);
    torch::Tensor valid;
    if (!opts.mask.empty()) {
      if (!fs::is_regular_file(opts.mask)) {
        throw DataError("missing data file: " + opts.mask);
      }
      cv::Mat m = cv::imread(opts.mask, cv::IMREAD_GRAYSCALE);
      if (m.empty() || m.rows != h || m.cols != w) {
        throw DataError("mask " + opts.mask + " unreadable or not " +
                        std::to_string(w) + "x" + std::to_string(h));
      }
      valid = torch::from_blob(m.data, {h, w}, torch::kUInt8).clone();
    }
    const bool metric = gt.original_range_mm && pred.original_range_mm;
    auto metrics = metric ? ComputeDepthMetrics(ToMillimetres(pred),
                                                ToMillimetres(gt), valid)
                          : ComputeDepthMetrics(pred.depth, gt.depth, valid);
    metrics.metric_units = metric;
    std::ostringstream report;
    report << std::setprecision(6) << "delta1 = " << metrics.delta1
           << "\ndelta2 = " << metrics.delta2 << "\ndelta3 = " << metrics.delta3
           << "\nabs_rel = " << metrics.abs_rel << "\nrmse = " << metrics.rmse
           << "\nlog10 = " << metrics.log10
           << "\nunits = " << (metric ? "mm" : "normalized")
           << "\nvalid_pixels = " << metrics.valid_pixels << '\n';
    std::ofstream(manifest.run_dir() / "depth_metrics.txt") << report.str();
    out << report.str();
    manifest.results() = {{"delta1", metrics.delta1}, {"delta2", metrics.delta2},
                          {"delta3", metrics.delta3}, {"abs_rel", metrics.abs_rel},
                          {"rmse", metrics.rmse},     {"log10", metrics.log10}};
  });
}

}  // namespace

int Run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"GPM-augmented U-Net segmentation toolkit", "gpmseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CodeVersion());

  ConfigOptions train_opts;
  auto* train = app.add_subcommand("train", "train one model per seed");
  AddConfigOptions(*train, train_opts);

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints on datasets");
  eval->add_option("--checkpoint", eval_opts.checkpoints,
                   "checkpoint file (repeat for several seeds)")
      ->required();
  eval->add_option("--dataset", eval_opts.datasets,
                   "manifest, optionally prefixed by name= (repeatable)")
      ->required();
  eval->add_option("--method", eval_opts.method, "method column label");
  eval->add_option("--output-dir", eval_opts.output_dir, "run root directory");
  eval->add_option("--batch-size", eval_opts.batch_size, "evaluation batch");

  ConfigOptions ablate_opts;
  auto* ablate = app.add_subcommand(
      "ablate", "baseline vs GPM bottom-to-top vs GPM top-to-bottom");
  AddConfigOptions(*ablate, ablate_opts);

  ConfigOptions complexity_opts;
  bool breakdown = false;
  auto* complexity = app.add_subcommand(
      "complexity", "parameter and FLOP counts with and without GPMs");
  AddConfigOptions(*complexity, complexity_opts);
  complexity->add_flag("--breakdown", breakdown, "per-module rows");

  DepthMetricsOptions depth_opts;
  auto* depth = app.add_subcommand("depth-metrics",
                                   "delta/AbsRel/RMSE/log10 of a depth map");
  depth->add_option("--pred", depth_opts.pred, "predicted depth file")
      ->required();
  depth->add_option("--gt", depth_opts.gt, "ground-truth depth file")
      ->required();
  depth->add_option("--mask", depth_opts.mask, "valid-pixel mask (nonzero)");
  depth->add_option("--output-dir", depth_opts.output_dir, "run root directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return CmdTrain(train_opts, out);
    if (*eval) return CmdEval(eval_opts, out);
    if (*ablate) return CmdAblate(ablate_opts, out);
    if (*complexity) return CmdComplexity(complexity_opts, breakdown, out);
    if (*depth) return CmdDepthMetrics(depth_opts, out);
  } catch (...) {
    std::string message;
    const int code = Classify(std::current_exception(), message);
    err << message << '\n';
    return code;
  }
  return kExitFailure;
}

}  // namespace gpmseg::cli
