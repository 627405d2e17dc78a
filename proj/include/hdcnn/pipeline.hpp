// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/config.hpp"
#include "hdcnn/dataset.hpp"
#include "hdcnn/hierarchy.hpp"
#include "hdcnn/model.hpp"
#include "hdcnn/runtime.hpp"
#include "hdcnn/trainer.hpp"

namespace hdcnn {

/// Error raised by a pipeline stage; what() is prefixed with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Runs `fn`, rethrowing any exception as a StageError tagged `stage`.
void run_stage(const std::string& stage, const std::function<void()>& fn);

/// Independent random stream for each pipeline stage.
enum class SeedStream : std::uint64_t {
  kSynth = 1,
  kSplit = 2,
  kBlock = 3,
  kSpectral = 4,
  kAssemble = 5,
  kFine = 6,
  kFinetune = 7,
  kQuantize = 8,
  kBaselines = 100,
};
std::uint64_t stage_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index = 0);

struct ExperimentData {
  Dataset train_raw;
  Dataset test_raw;
  Normalization norm;
  LabeledImages train;
  LabeledImages test;
  std::size_t num_classes() const { return train_raw.num_classes; }
};

/// Loads the configured datasets or synthesizes them from the config seed.
ExperimentData prepare_data(const ExperimentConfig& cfg);
void write_synthetic_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Spec file named by the config, or the default desk block for the data.
NetworkSpec block_spec_for(const ExperimentConfig& cfg, const ExperimentData& data);
/// Same network with twice the filters in every convolutional layer.
NetworkSpec doubled_width_spec(const NetworkSpec& spec);

HeldOutSplit split_training_set(const ExperimentConfig& cfg, const ExperimentData& data);
TrainConfig seeded(TrainConfig cfg, std::uint64_t seed);

struct HierarchyBuild {
  Tensor confusion;
  Hierarchy hierarchy;
};
/// Confusion on the held-out images, spectral clustering into K disjoint
/// coarse classes, then the overlapping extension with the config's gamma.
HierarchyBuild build_hierarchy(const ExperimentConfig& cfg, const Network& block, const ExperimentData& data,
                               const HeldOutSplit& split, std::size_t num_coarse, double gamma);

/// One row of metrics.csv.
struct MetricsRow {
  std::string model;
  std::size_t views = 1;
  std::string exec = "all";  // "all" or "threshold"
  std::optional<double> beta;
  std::string pq = "none";
  EvalReport report;
  std::size_t parameter_bytes = 0;
};

std::string metrics_csv_header();
/// Deterministic columns only; wall time goes to timings.csv.
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
std::string format_timings_csv(const std::vector<MetricsRow>& rows);

/// A model directory: block spec, hierarchy, checkpoints and manifest.
struct ModelBundle {
  NetworkSpec block_spec;
  std::size_t split_index = 0;
  HdcnnModel model;
  Normalization norm;
  std::vector<QuantizedLayer> quantized;
};

void write_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle read_bundle(const std::filesystem::path& dir);
std::string format_manifest(const ModelBundle& bundle);

/// Saves and restores the pretrained building block and its normalization.
void write_block(const Network& block, const Normalization& norm, const std::filesystem::path& dir);
Network read_block(const std::filesystem::path& dir, Normalization* norm = nullptr);

/// Exclusive ownership of an experiment directory through a lock file.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Appends training records to train_log.jsonl as JSON lines.
class JsonLinesLog {
 public:
  explicit JsonLinesLog(const std::filesystem::path& path, bool append = true);
  void operator()(const TrainLogRecord& r);
  TrainLogger logger(std::string stage_suffix = {});

 private:
  std::filesystem::path path_;
};

/// One evaluation row of a model under an execution policy and view mode.
MetricsRow evaluate_model_row(const std::string& name, const HdcnnModel& model, const ExecPolicy& policy,
                              const LabeledImages& test, std::size_t crop, ViewMode view, std::size_t workers);
MetricsRow evaluate_block_row(const std::string& name, const Predictor& predictor, std::size_t parameter_count,
                              const LabeledImages& test, std::size_t crop, ViewMode view, std::size_t workers);

struct PipelineResult {
  Network block;
  Hierarchy hierarchy;
  HdcnnModel pretrained;
  std::optional<HdcnnModel> finetuned_plain;  // lambda = 0
  std::optional<HdcnnModel> finetuned;        // configured lambda
  std::vector<MetricsRow> rows;

  /// Top-1 error of the single-view, full-execution row for `model`.
  double top1(std::string_view model) const;
};

/// Algorithm end to end. Writes metrics.csv, timings.csv, hierarchy.txt,
/// likelihood.csv, confusion.csv, train_log.jsonl, block/ and bundle/.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Baseline table: building block, model averaging of M blocks, the
/// doubled-width block and the HD-CNN rows of metrics.csv. Runs the
/// pipeline first when its artifacts are missing. Writes baselines.csv.
std::vector<MetricsRow> run_baselines(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct SweepRow {
  double value = 0.0;
  bool ok = true;
  std::string error;
  EvalReport report;
  double mean_partial_size = 0.0;
};

/// One row per grid point for parameter "beta", "gamma" or "K". Failing
/// points are recorded and the sweep continues. Writes sweep_<param>.csv.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const std::string& parameter, const std::vector<double>& grid);
std::string format_sweep_csv(const std::string& parameter, const std::vector<SweepRow>& rows);

}  // namespace hdcnn
