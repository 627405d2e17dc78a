// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hdcnn/config.hpp"
#include "hdcnn/errors.hpp"
#include "hdcnn/hierarchy.hpp"
#include "hdcnn/pipeline.hpp"
#include "hdcnn/pq.hpp"
#include "hdcnn/runtime.hpp"

namespace fs = std::filesystem;
using namespace hdcnn;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "hdcnn_out";
  std::size_t workers = 1;
};

ExperimentConfig load_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? default_experiment_config() : load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.workers = g.workers;
  cfg.validate();
  return cfg;
}

void print_rows(const std::vector<MetricsRow>& rows) { std::cout << format_metrics_csv(rows); }

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  ExperimentData data;
  NetworkSpec spec;
  HeldOutSplit split;
  LabeledImages remainder;
};

Context open_context(const GlobalOptions& g) {
  Context c;
  c.cfg = load_config(g);
  c.out = g.out;
  run_stage("data", [&] {
    c.data = prepare_data(c.cfg);
    c.spec = block_spec_for(c.cfg, c.data);
    c.split = split_training_set(c.cfg, c.data);
    c.remainder = subset(c.data.train, c.split.remainder);
  });
  return c;
}

std::size_t crop_for(const Network& net, const LabeledImages& data) {
  const std::size_t want = net.spec().input.at(1);
  return want == data.images.dim(2) ? 0 : want;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical deep CNN training and evaluation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (INI)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Experiment directory")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write the synthetic train and test datasets");
  auto* pretrain = app.add_subcommand("pretrain", "Train the building block on the non-held-out images");
  auto* hierarchy = app.add_subcommand("hierarchy", "Build the category hierarchy from the block's confusion");
  auto* pretrain_fine = app.add_subcommand("pretrain-fine", "Assemble the HD-CNN and pretrain its fine components");
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune the bundled HD-CNN");
  double lambda_override = -1.0;
  finetune_cmd->add_option("--lambda", lambda_override, "Consistency weight (default: config)");
  auto* eval = app.add_subcommand("eval", "Evaluate the bundled HD-CNN");
  bool use_pq = false;
  eval->add_flag("--pq", use_pq, "Use the quantized rear layers");
  auto* compress = app.add_subcommand("compress", "Product-quantize the two largest rear layers of the bundle");
  auto* sweep = app.add_subcommand("sweep", "Sweep beta, gamma or K");
  std::string sweep_param;
  std::string sweep_grid;
  sweep->add_option("--param", sweep_param, "beta, gamma or K")->required()->check(CLI::IsMember({"beta", "gamma", "K"}));
  sweep->add_option("--grid", sweep_grid, "Comma-separated grid")->required();
  auto* baselines = app.add_subcommand("baselines", "Building block, model averaging and doubled-width baselines");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage end to end");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const ExperimentConfig cfg = load_config(g);
      run_stage("synth", [&] { write_synthetic_data(cfg, fs::path(g.out) / "data"); });
      std::cout << "wrote " << (fs::path(g.out) / "data").string() << "\n";
    } else if (pretrain->parsed()) {
      Context c = open_context(g);
      DirectoryLock lock(c.out);
      JsonLinesLog log(c.out / "train_log.jsonl");
      run_stage("pretrain", [&] {
        const Network block = pretrain_building_block(
            c.spec, c.remainder, seeded(c.cfg.block, stage_seed(c.cfg.seed, SeedStream::kBlock)), log.logger());
        write_block(block, c.data.norm, c.out / "block");
      });
    } else if (hierarchy->parsed()) {
      Context c = open_context(g);
      DirectoryLock lock(c.out);
      run_stage("hierarchy", [&] {
        const Network block = read_block(c.out / "block");
        const HierarchyBuild hb = build_hierarchy(c.cfg, block, c.data, c.split, c.cfg.num_coarse, c.cfg.gamma);
        write_hierarchy_files(hb.hierarchy, c.out / "hierarchy.txt", c.out / "likelihood.csv");
        std::cout << format_hierarchy(hb.hierarchy);
      });
    } else if (pretrain_fine->parsed()) {
      Context c = open_context(g);
      DirectoryLock lock(c.out);
      JsonLinesLog log(c.out / "train_log.jsonl");
      run_stage("pretrain-fine", [&] {
        const Network block = read_block(c.out / "block");
        const Hierarchy h = read_hierarchy_files(c.out / "hierarchy.txt", c.out / "likelihood.csv");
        Rng rng(stage_seed(c.cfg.seed, SeedStream::kAssemble));
        HdcnnModel m = assemble(block, block.spec().split_index, h, rng);
        pretrain_fine_components(m, c.remainder, seeded(c.cfg.fine, stage_seed(c.cfg.seed, SeedStream::kFine)),
                                 c.cfg.workers, log.logger());
        write_bundle({block.spec(), block.spec().split_index, m, c.data.norm, {}}, c.out / "bundle");
      });
    } else if (finetune_cmd->parsed()) {
      Context c = open_context(g);
      DirectoryLock lock(c.out);
      JsonLinesLog log(c.out / "train_log.jsonl");
      run_stage("finetune", [&] {
        ModelBundle b = read_bundle(c.out / "bundle");
        TrainConfig tc = seeded(c.cfg.finetune, stage_seed(c.cfg.seed, SeedStream::kFinetune));
        if (lambda_override >= 0.0) tc.lambda = lambda_override;
        std::vector<std::size_t> sizes(c.data.num_classes(), 0);
        for (int y : c.remainder.labels) ++sizes[static_cast<std::size_t>(y)];
        const auto targets = consistency_targets(b.model.hierarchy, sizes);
        finetune(b.model, c.remainder, targets, tc, log.logger("-lambda" + format_double(tc.lambda)));
        b.quantized.clear();
        write_bundle(b, c.out / "bundle");
      });
    } else if (eval->parsed()) {
      Context c = open_context(g);
      DirectoryLock lock(c.out);
      run_stage("eval", [&] {
        const ModelBundle b = read_bundle(c.out / "bundle");
        if (use_pq && b.quantized.empty()) throw InputError("the bundle has no quantized layers; run compress first");
        const HdcnnModel m = use_pq ? with_quantized(b.model, b.quantized) : b.model;
        const Network probe(b.block_spec);
        const std::size_t crop = crop_for(probe, c.data.test);
        std::vector<MetricsRow> rows;
        const std::string name = use_pq ? "hdcnn-pq" : "hdcnn";
        rows.push_back(evaluate_model_row(name, m, ExecPolicy::all(), c.data.test, crop, ViewMode::kSingle, c.cfg.workers));
        if (c.cfg.ten_view)
          rows.push_back(evaluate_model_row(name, m, ExecPolicy::all(), c.data.test, crop, ViewMode::kTen, c.cfg.workers));
        for (double beta : c.cfg.betas)
          rows.push_back(evaluate_model_row(name, m, ExecPolicy::threshold(beta), c.data.test, crop, ViewMode::kSingle,
                                            c.cfg.workers));
        std::ofstream(c.out / "eval.csv") << format_metrics_csv(rows);
        print_rows(rows);
      });
    } else if (compress->parsed()) {
      const ExperimentConfig cfg = load_config(g);
      const fs::path out = g.out;
      DirectoryLock lock(out);
      run_stage("compress", [&] {
        ModelBundle b = read_bundle(out / "bundle");
        const auto layers = largest_rear_layers(b.model);
        const CompressedModel cm =
            compress_model(b.model, layers, cfg.pq_s, cfg.pq_k, stage_seed(cfg.seed, SeedStream::kQuantize));
        b.quantized = cm.layers;
        write_bundle(b, out / "bundle");
        for (const QuantizedLayer& q : cm.layers) {
          std::cout << q.name() << " m=" << q.matrix.m << " n=" << q.matrix.n << " s=" << q.matrix.s
                    << " k=" << q.matrix.k << " factor="
                    << format_double(compression_factor(static_cast<double>(q.matrix.m), static_cast<double>(q.matrix.n),
                                                        static_cast<double>(q.matrix.s), static_cast<double>(q.matrix.k)))
                    << "\n";
        }
        std::cout << "parameter bytes " << raw_parameter_bytes(b.model) << " -> " << compressed_parameter_bytes(cm)
                  << "\n";
      });
    } else if (sweep->parsed()) {
      const ExperimentConfig cfg = load_config(g);
      const auto grid = parse_double_list(sweep_grid);
      std::cout << format_sweep_csv(sweep_param, run_sweep(cfg, g.out, sweep_param, grid));
    } else if (baselines->parsed()) {
      print_rows(run_baselines(load_config(g), g.out));
    } else if (pipeline->parsed()) {
      print_rows(run_pipeline(load_config(g), g.out).rows);
    }
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [setup]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
