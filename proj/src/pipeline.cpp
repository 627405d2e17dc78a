// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace fs = std::filesystem;

void run_stage(const std::string& stage, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::uint64_t stage_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index) {
  return Rng::mix_seed(Rng::mix_seed(seed, static_cast<std::uint64_t>(stream)), index);
}

TrainConfig seeded(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.train_path) {
    d.train_raw = load_dataset(*cfg.train_path);
    d.test_raw = load_dataset(*cfg.test_path);
  } else {
    Rng rng(stage_seed(cfg.seed, SeedStream::kSynth));
    SynthData s = synth_dataset(cfg.synth, rng);
    d.train_raw = std::move(s.train);
    d.test_raw = std::move(s.test);
  }
  d.train_raw.validate(true);
  d.test_raw.validate();
  if (d.test_raw.height != d.train_raw.height || d.test_raw.width != d.train_raw.width ||
      d.test_raw.channels != d.train_raw.channels || d.test_raw.num_classes != d.train_raw.num_classes) {
    throw InputError("train and test datasets differ in image geometry or class count");
  }
  d.norm = fit_normalization(d.train_raw);
  d.train = to_labeled_images(d.train_raw, d.norm);
  d.test = to_labeled_images(d.test_raw, d.norm);
  return d;
}

void write_synthetic_data(const ExperimentConfig& cfg, const fs::path& dir) {
  Rng rng(stage_seed(cfg.seed, SeedStream::kSynth));
  const SynthData s = synth_dataset(cfg.synth, rng);
  fs::create_directories(dir);
  save_dataset(s.train, dir / "train.hdc");
  save_dataset(s.test, dir / "test.hdc");
}

NetworkSpec block_spec_for(const ExperimentConfig& cfg, const ExperimentData& data) {
  NetworkSpec spec = cfg.spec_path ? read_spec_file(*cfg.spec_path)
                                   : default_block_spec(data.train_raw.channels, data.num_classes(), cfg.input_size);
  if (cfg.split_index) spec.split_index = *cfg.split_index;
  spec.validate();
  if (spec.label_count() != data.num_classes())
    throw InputError("network predicts " + std::to_string(spec.label_count()) + " classes, data has " +
                     std::to_string(data.num_classes()));
  if (spec.input.size() != 3 || spec.input[0] != data.train_raw.channels || spec.input[1] > data.train_raw.height ||
      spec.input[2] > data.train_raw.width || spec.input[1] != spec.input[2]) {
    throw InputError("network input " + shape_string(spec.input) + " does not fit the images");
  }
  return spec;
}

NetworkSpec doubled_width_spec(const NetworkSpec& spec) {
  NetworkSpec out = spec;
  const std::size_t cls = spec.classifier_index();
  Shape shape = out.input;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& l = out.layers[i];
    if (l.kind == LayerKind::kConv2d) {
      l.in = shape[0];
      if (i != cls) l.out *= 2;
    } else if (l.kind == LayerKind::kFullyConnected) {
      l.in = shape_size(shape);
    }
    NetworkSpec prefix;
    prefix.input = out.input;
    prefix.layers.assign(out.layers.begin(), out.layers.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    shape = prefix.shapes().back();
  }
  out.validate();
  return out;
}

namespace {

std::size_t eval_crop(const Network& net, const LabeledImages& data) {
  const std::size_t want = net.spec().input.at(1);
  return want == data.images.dim(2) && want == data.images.dim(3) ? 0 : want;
}

std::vector<std::size_t> class_sizes_of(std::span<const int> labels, std::size_t c) {
  std::vector<std::size_t> sizes(c, 0);
  for (int y : labels) ++sizes.at(static_cast<std::size_t>(y));
  return sizes;
}

std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::vector<double> split_doubles(std::string_view text) { return parse_double_list(text); }

// "key=value" tokens of one manifest line after its leading keyword.
std::map<std::string, std::string> tokens_of(std::string_view line) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

std::string need_token(const std::map<std::string, std::string>& t, const std::string& key, const std::string& what) {
  const auto it = t.find(key);
  if (it == t.end()) throw InputError(what + " is missing " + key + "=");
  return it->second;
}

std::size_t to_size(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw InputError(what + ": \"" + s + "\" is not an integer");
  return static_cast<std::size_t>(v);
}

std::string normalization_line(const Normalization& n) {
  return "normalization mean=" + join_doubles(n.mean) + " std=" + join_doubles(n.stddev);
}

Normalization parse_normalization(std::string_view line) {
  const auto t = tokens_of(line);
  return {split_doubles(need_token(t, "mean", "normalization")), split_doubles(need_token(t, "std", "normalization"))};
}

std::string find_line(std::string_view text, std::string_view keyword) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(std::string(keyword) + " ", 0) == 0 || line.rfind(std::string(keyword) + "=", 0) == 0) return line;
  throw InputError("manifest has no " + std::string(keyword) + " line");
}

}  // namespace

HeldOutSplit split_training_set(const ExperimentConfig& cfg, const ExperimentData& data) {
  Rng rng(stage_seed(cfg.seed, SeedStream::kSplit));
  return sample_held_out(data.train.labels, data.num_classes(), cfg.per_class_heldout, rng);
}

HierarchyBuild build_hierarchy(const ExperimentConfig& cfg, const Network& block, const ExperimentData& data,
                               const HeldOutSplit& split, std::size_t num_coarse, double gamma) {
  const std::size_t c = data.num_classes();
  if (num_coarse == 0 || num_coarse > c)
    throw InputError("K=" + std::to_string(num_coarse) + " must lie in [1, " + std::to_string(c) + "]");
  const LabeledImages held = subset(data.train, split.heldout);
  const std::size_t crop = eval_crop(block, held);
  EvalOptions opts;
  opts.crop = crop;
  opts.workers = cfg.workers;
  // Block probabilities on the held-out images, in order.
  Tensor probs({held.size(), c});
  const Predictor pred = network_predictor(block);
  for (std::size_t lo = 0; lo < held.size(); lo += kEvalBatchSize) {
    const std::size_t hi = std::min(held.size(), lo + kEvalBatchSize);
    std::vector<std::size_t> rows(hi - lo);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = lo + i;
    const BatchPrediction p = multiview_predict(pred, gather_rows(held.images, rows), crop, ViewMode::kSingle);
    std::copy(p.probs.storage().begin(), p.probs.storage().end(), probs.data() + lo * c);
  }
  HierarchyBuild out;
  out.confusion = confusion_from_predictions(probs, held.labels, c);
  Rng rng(stage_seed(cfg.seed, SeedStream::kSpectral));
  const std::vector<int> disjoint = spectral_cluster(distance_from_confusion(out.confusion), num_coarse, rng);
  const Tensor coarse = aggregate_coarse(probs, disjoint_as_mapping(disjoint), num_coarse);
  const Tensor u = misclassification_likelihood(coarse, held.labels, c);
  out.hierarchy = extend_overlapping(disjoint, u, gamma);
  return out;
}

std::string metrics_csv_header() { return "model,views,exec,beta,pq,top1_err,top5_err,mean_executed,parameter_bytes"; }

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const MetricsRow& r : rows) {
    out += r.model + "," + std::to_string(r.views) + "," + r.exec + "," + (r.beta ? format_double(*r.beta) : "") +
           "," + r.pq + "," + format_double(r.report.top1_err) + "," +
           (r.report.top5_err ? format_double(*r.report.top5_err) : "") + "," +
           format_double(r.report.mean_executed_components) + "," + std::to_string(r.parameter_bytes) + "\n";
  }
  return out;
}

std::string format_timings_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "model,views,exec,beta,pq,images,workers,wall_time_sec\n";
  for (const MetricsRow& r : rows) {
    out += r.model + "," + std::to_string(r.views) + "," + r.exec + "," + (r.beta ? format_double(*r.beta) : "") +
           "," + r.pq + "," + std::to_string(r.report.images) + "," + std::to_string(r.report.workers) + "," +
           format_double(r.report.wall_time_sec) + "\n";
  }
  return out;
}

namespace {

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) throw InputError("metrics.csv has an unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw InputError("metrics.csv row has " + std::to_string(f.size()) + " fields");
    MetricsRow r;
    r.model = f[0];
    r.views = to_size(f[1], "views");
    r.exec = f[2];
    if (!f[3].empty()) r.beta = split_doubles(f[3]).at(0);
    r.pq = f[4];
    r.report.top1_err = split_doubles(f[5]).at(0);
    if (!f[6].empty()) r.report.top5_err = split_doubles(f[6]).at(0);
    r.report.mean_executed_components = split_doubles(f[7]).at(0);
    r.parameter_bytes = to_size(f[8], "parameter_bytes");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

std::string format_manifest(const ModelBundle& b) {
  std::string out = "hdcnn-bundle version=1\n";
  out += "split_index=" + std::to_string(b.split_index) + "\n";
  out += "K=" + std::to_string(b.model.num_coarse()) + "\n";
  out += "C=" + std::to_string(b.model.num_fine()) + "\n";
  out += "aggregation=overlapping\n";
  out += normalization_line(b.norm) + "\n";
  for (const QuantizedLayer& q : b.quantized) {
    out += "pq layer=" + q.name() + " s=" + std::to_string(q.matrix.s) + " k=" + std::to_string(q.matrix.k) +
           " seed=" + std::to_string(q.seed) + "\n";
  }
  return out;
}

void write_bundle(const ModelBundle& b, const fs::path& dir) {
  b.model.validate();
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".hdw" || ext == ".hdq") fs::remove(entry.path());
  }
  write_spec_file(b.block_spec, dir / "spec.txt");
  write_hierarchy_files(b.model.hierarchy, dir / "hierarchy.txt", dir / "likelihood.csv");
  write_checkpoint(b.model.shared.params(), dir / "shared.hdw");
  write_checkpoint(b.model.coarse.params(), dir / "coarse.hdw");
  for (std::size_t k = 0; k < b.model.fine.size(); ++k)
    write_checkpoint(b.model.fine[k].rear.params(), dir / ("fine_" + std::to_string(k + 1) + ".hdw"));
  for (const QuantizedLayer& q : b.quantized) write_quantized(q.matrix, dir / ("pq_" + q.name() + ".hdq"));
  detail::write_file(dir / "manifest.txt", format_manifest(b));
}

ModelBundle read_bundle(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt")) throw InputError("no model bundle at " + dir.string());
  const std::string manifest = detail::read_file(dir / "manifest.txt");
  ModelBundle b;
  b.block_spec = read_spec_file(dir / "spec.txt");
  b.split_index = to_size(tokens_of(find_line(manifest, "split_index")).at("split_index"), "split_index");
  b.norm = parse_normalization(find_line(manifest, "normalization"));
  const Hierarchy h = read_hierarchy_files(dir / "hierarchy.txt", dir / "likelihood.csv");
  const Network blank(b.block_spec);
  Rng unused(0);
  b.model = assemble(blank, b.split_index, h, unused);
  read_checkpoint(b.model.shared, dir / "shared.hdw");
  read_checkpoint(b.model.coarse, dir / "coarse.hdw");
  for (std::size_t k = 0; k < b.model.fine.size(); ++k)
    read_checkpoint(b.model.fine[k].rear, dir / ("fine_" + std::to_string(k + 1) + ".hdw"));

  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("pq ", 0) != 0) continue;
    const auto t = tokens_of(line);
    QuantizedLayer q;
    const std::string name = need_token(t, "layer", "pq line");
    const auto dot = name.find('.');
    if (dot == std::string::npos) throw InputError("pq layer name " + name + " has no layer index");
    const std::string owner = name.substr(0, dot);
    if (owner == "coarse") {
      q.component = -1;
    } else if (owner.rfind("fine", 0) == 0) {
      q.component = static_cast<int>(to_size(owner.substr(4), "pq component")) - 1;
    } else {
      throw InputError("pq layer name " + name + " names no component");
    }
    q.layer = to_size(name.substr(dot + 1), "pq layer index");
    q.seed = std::stoull(need_token(t, "seed", "pq line"));
    q.matrix = read_quantized(dir / ("pq_" + name + ".hdq"));
    if (q.matrix.s != to_size(need_token(t, "s", "pq line"), "s") ||
        q.matrix.k != to_size(need_token(t, "k", "pq line"), "k"))
      throw InputError("pq descriptor for " + name + " disagrees with its matrix file");
    b.quantized.push_back(std::move(q));
  }
  with_quantized(b.model, b.quantized);  // shape check
  return b;
}

void write_block(const Network& block, const Normalization& norm, const fs::path& dir) {
  fs::create_directories(dir);
  write_spec_file(block.spec(), dir / "spec.txt");
  write_checkpoint(block.params(), dir / "block.hdw");
  detail::write_file(dir / "normalization.txt", normalization_line(norm) + "\n");
}

Network read_block(const fs::path& dir, Normalization* norm) {
  if (!fs::exists(dir / "block.hdw")) throw InputError("no pretrained building block at " + dir.string());
  Network net(read_spec_file(dir / "spec.txt"));
  read_checkpoint(net, dir / "block.hdw");
  if (norm) *norm = parse_normalization(find_line(detail::read_file(dir / "normalization.txt"), "normalization"));
  return net;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw StateError("experiment directory " + dir.string() + " is locked (" + path_.string() + " exists)");
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

JsonLinesLog::JsonLinesLog(const fs::path& path, bool append) : path_(path) {
  if (!append) detail::write_file(path_, "");
}

void JsonLinesLog::operator()(const TrainLogRecord& r) {
  const nlohmann::json j = {{"stage", r.stage},
                            {"iteration", r.iteration},
                            {"lr", r.lr},
                            {"loss", r.loss},
                            {"consistency_term", r.consistency_term},
                            {"top1_train_err", r.top1_train_err}};
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("cannot append to " + path_.string());
}

TrainLogger JsonLinesLog::logger(std::string stage_suffix) {
  return [this, suffix = std::move(stage_suffix)](const TrainLogRecord& r) {
    TrainLogRecord copy = r;
    copy.stage += suffix;
    (*this)(copy);
  };
}

MetricsRow evaluate_block_row(const std::string& name, const Predictor& predictor, std::size_t parameter_count,
                              const LabeledImages& test, std::size_t crop, ViewMode view, std::size_t workers) {
  MetricsRow row;
  row.model = name;
  row.views = view == ViewMode::kTen ? kViewCount : 1;
  EvalOptions opts;
  opts.view = view;
  opts.crop = crop;
  opts.workers = workers;
  row.report = evaluate(predictor, test.images, test.labels, opts);
  row.parameter_bytes = parameter_count * sizeof(double);
  return row;
}

MetricsRow evaluate_model_row(const std::string& name, const HdcnnModel& model, const ExecPolicy& policy,
                              const LabeledImages& test, std::size_t crop, ViewMode view, std::size_t workers) {
  MetricsRow row;
  row.model = name;
  row.views = view == ViewMode::kTen ? kViewCount : 1;
  if (policy.mode == ExecPolicy::Mode::kThreshold) {
    row.exec = "threshold";
    row.beta = policy.beta;
  }
  EvalOptions opts;
  opts.view = view;
  opts.crop = crop;
  opts.workers = workers;
  row.report = evaluate(model_predictor(model, policy), test.images, test.labels, opts);
  row.parameter_bytes = raw_parameter_bytes(model);
  return row;
}

double PipelineResult::top1(std::string_view model) const {
  for (const MetricsRow& r : rows)
    if (r.model == model && r.views == 1 && r.exec == "all" && r.pq == "none") return r.report.top1_err;
  throw InputError("no metrics row for " + std::string(model));
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  DirectoryLock lock(out);
  JsonLinesLog log(out / "train_log.jsonl", false);
  PipelineResult result;
  ExperimentData data;
  NetworkSpec spec;
  HeldOutSplit split;
  LabeledImages remainder;

  run_stage("data", [&] {
    data = prepare_data(cfg);
    spec = block_spec_for(cfg, data);
    split = split_training_set(cfg, data);
    remainder = subset(data.train, split.remainder);
  });
  run_stage("pretrain", [&] {
    result.block =
        pretrain_building_block(spec, remainder, seeded(cfg.block, stage_seed(cfg.seed, SeedStream::kBlock)),
                                log.logger());
    write_block(result.block, data.norm, out / "block");
  });
  run_stage("hierarchy", [&] {
    const HierarchyBuild hb = build_hierarchy(cfg, result.block, data, split, cfg.num_coarse, cfg.gamma);
    result.hierarchy = hb.hierarchy;
    write_hierarchy_files(hb.hierarchy, out / "hierarchy.txt", out / "likelihood.csv");
    detail::write_file(out / "confusion.csv", format_likelihood_csv(hb.confusion));
  });
  run_stage("pretrain-fine", [&] {
    Rng rng(stage_seed(cfg.seed, SeedStream::kAssemble));
    result.pretrained = assemble(result.block, spec.split_index, result.hierarchy, rng);
    pretrain_fine_components(result.pretrained, remainder,
                             seeded(cfg.fine, stage_seed(cfg.seed, SeedStream::kFine)), cfg.workers, log.logger());
  });
  if (cfg.finetune_enabled) {
    run_stage("finetune", [&] {
      const auto targets = consistency_targets(result.hierarchy, class_sizes_of(remainder.labels, data.num_classes()));
      const TrainConfig base = seeded(cfg.finetune, stage_seed(cfg.seed, SeedStream::kFinetune));
      TrainConfig plain = base;
      plain.lambda = 0.0;
      result.finetuned_plain = result.pretrained;
      finetune(*result.finetuned_plain, remainder, targets, plain, log.logger("-lambda0"));
      if (base.lambda != 0.0) {
        result.finetuned = result.pretrained;
        finetune(*result.finetuned, remainder, targets, base, log.logger("-lambda" + format_double(base.lambda)));
      } else {
        result.finetuned = result.finetuned_plain;
      }
    });
  }

  const HdcnnModel& final_model = result.finetuned ? *result.finetuned : result.pretrained;
  const std::string final_name =
      result.finetuned ? "hdcnn-ft-lambda" + format_double(cfg.finetune.lambda) : "hdcnn-no-ft";
  CompressedModel compressed;
  run_stage("eval", [&] {
    const std::size_t crop = eval_crop(result.block, data.test);
    auto& rows = result.rows;
    const Predictor block_pred = network_predictor(result.block);
    const std::size_t block_params = result.block.parameter_count();
    rows.push_back(evaluate_block_row("block", block_pred, block_params, data.test, crop, ViewMode::kSingle, cfg.workers));
    if (cfg.ten_view)
      rows.push_back(evaluate_block_row("block", block_pred, block_params, data.test, crop, ViewMode::kTen, cfg.workers));
    auto row = [&](const std::string& name, const HdcnnModel& m, const ExecPolicy& policy, ViewMode view) {
      rows.push_back(evaluate_model_row(name, m, policy, data.test, crop, view, cfg.workers));
    };
    if (result.finetuned) {
      row("hdcnn-no-ft", result.pretrained, ExecPolicy::all(), ViewMode::kSingle);
      if (cfg.finetune.lambda != 0.0)
        row("hdcnn-ft-lambda0", *result.finetuned_plain, ExecPolicy::all(), ViewMode::kSingle);
    }
    row(final_name, final_model, ExecPolicy::all(), ViewMode::kSingle);
    if (cfg.ten_view) row(final_name, final_model, ExecPolicy::all(), ViewMode::kTen);
    for (double beta : cfg.betas) row(final_name, final_model, ExecPolicy::threshold(beta), ViewMode::kSingle);
  });
  run_stage("compress", [&] {
    const auto layers = largest_rear_layers(final_model);
    compressed =
        compress_model(final_model, layers, cfg.pq_s, cfg.pq_k, stage_seed(cfg.seed, SeedStream::kQuantize));
    const std::size_t crop = eval_crop(result.block, data.test);
    MetricsRow pq_row = evaluate_model_row(final_name, compressed.model, ExecPolicy::all(), data.test, crop,
                                           ViewMode::kSingle, cfg.workers);
    pq_row.pq = "s" + std::to_string(cfg.pq_s) + "-k" + std::to_string(cfg.pq_k);
    pq_row.parameter_bytes = compressed_parameter_bytes(compressed);
    result.rows.push_back(std::move(pq_row));
    write_bundle({spec, spec.split_index, final_model, data.norm, compressed.layers}, out / "bundle");
  });
  detail::write_file(out / "metrics.csv", format_metrics_csv(result.rows));
  detail::write_file(out / "timings.csv", format_timings_csv(result.rows));
  return result;
}

std::vector<MetricsRow> run_baselines(const ExperimentConfig& cfg, const fs::path& out) {
  if (!fs::exists(out / "metrics.csv") || !fs::exists(out / "block" / "block.hdw")) run_pipeline(cfg, out);
  DirectoryLock lock(out);
  std::vector<MetricsRow> rows;
  run_stage("baselines", [&] {
    const ExperimentData data = prepare_data(cfg);
    const NetworkSpec spec = block_spec_for(cfg, data);
    const HeldOutSplit split = split_training_set(cfg, data);
    const LabeledImages remainder = subset(data.train, split.remainder);
    const Network block = read_block(out / "block");
    const std::size_t crop = eval_crop(block, data.test);
    rows.push_back(evaluate_block_row("block", network_predictor(block), block.parameter_count(), data.test, crop,
                                      ViewMode::kSingle, cfg.workers));

    std::vector<Network> members{block};
    for (std::size_t m = 1; m < cfg.averaging_models; ++m) {
      members.push_back(pretrain_building_block(
          spec, remainder, seeded(cfg.block, stage_seed(cfg.seed, SeedStream::kBaselines, m)), {}));
    }
    std::size_t params = 0;
    for (const Network& n : members) params += n.parameter_count();
    rows.push_back(evaluate_block_row("averaging-" + std::to_string(members.size()), averaged_predictor(members),
                                      params, data.test, crop, ViewMode::kSingle, cfg.workers));
    if (cfg.doubled_width) {
      const Network wide = pretrain_building_block(
          doubled_width_spec(spec), remainder,
          seeded(cfg.block, stage_seed(cfg.seed, SeedStream::kBaselines, 1000)), {});
      rows.push_back(evaluate_block_row("block-double", network_predictor(wide), wide.parameter_count(), data.test,
                                        crop, ViewMode::kSingle, cfg.workers));
    }
    for (MetricsRow& r : parse_metrics_csv(detail::read_file(out / "metrics.csv"))) {
      if (r.model.rfind("hdcnn", 0) == 0 && r.views == 1 && r.exec == "all" && r.pq == "none")
        rows.push_back(std::move(r));
    }
  });
  detail::write_file(out / "baselines.csv", format_metrics_csv(rows));
  return rows;
}

std::string format_sweep_csv(const std::string& parameter, const std::vector<SweepRow>& rows) {
  std::string out = parameter + ",status,top1_err,top5_err,mean_executed,mean_partial_size,wall_time_sec,error\n";
  for (const SweepRow& r : rows) {
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out += format_double(r.value) + "," + (r.ok ? "ok" : "failed") + ",";
    if (r.ok) {
      out += format_double(r.report.top1_err) + "," + (r.report.top5_err ? format_double(*r.report.top5_err) : "") +
             "," + format_double(r.report.mean_executed_components) + "," + format_double(r.mean_partial_size) + "," +
             format_double(r.report.wall_time_sec);
    } else {
      out += ",,,,";
    }
    out += "," + err + "\n";
  }
  return out;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const fs::path& out, const std::string& parameter,
                                const std::vector<double>& grid) {
  if (parameter != "beta" && parameter != "gamma" && parameter != "K")
    throw StageError("sweep", "parameter must be beta, gamma or K, got " + parameter);
  if (!fs::exists(out / "bundle" / "manifest.txt") || !fs::exists(out / "block" / "block.hdw")) run_pipeline(cfg, out);
  DirectoryLock lock(out);
  std::vector<SweepRow> rows;
  run_stage("sweep", [&] {
    const ExperimentData data = prepare_data(cfg);
    const Network block = read_block(out / "block");
    const std::size_t crop = eval_crop(block, data.test);
    EvalOptions opts;
    opts.crop = crop;
    opts.workers = cfg.workers;
    std::optional<ModelBundle> bundle;
    std::optional<HeldOutSplit> split;
    LabeledImages remainder;
    if (parameter == "beta") {
      bundle = read_bundle(out / "bundle");
    } else {
      split = split_training_set(cfg, data);
      remainder = subset(data.train, split->remainder);
    }
    const Hierarchy base = parameter == "gamma" ? read_hierarchy_files(out / "hierarchy.txt", out / "likelihood.csv")
                                                : Hierarchy{};
    for (double value : grid) {
      SweepRow row;
      row.value = value;
      try {
        if (parameter == "beta") {
          row.report = evaluate(model_predictor(bundle->model, ExecPolicy::threshold(value)), data.test.images,
                                data.test.labels, opts);
          for (const auto& s : bundle->model.hierarchy.partial_sets) row.mean_partial_size += s.size();
          row.mean_partial_size /= static_cast<double>(bundle->model.num_coarse());
        } else {
          Hierarchy h;
          if (parameter == "gamma") {
            h = extend_overlapping(base.disjoint, base.likelihood, value);
          } else {
            if (!(value >= 1.0) || value != std::floor(value))
              throw InputError("K must be a positive integer, got " + format_double(value));
            h = build_hierarchy(cfg, block, data, *split, static_cast<std::size_t>(value), cfg.gamma).hierarchy;
          }
          Rng rng(stage_seed(cfg.seed, SeedStream::kAssemble));
          HdcnnModel m = assemble(block, block.spec().split_index, h, rng);
          pretrain_fine_components(m, remainder, seeded(cfg.fine, stage_seed(cfg.seed, SeedStream::kFine)),
                                   cfg.workers, {});
          row.report = evaluate(model_predictor(m, ExecPolicy::all()), data.test.images, data.test.labels, opts);
          for (const auto& s : h.partial_sets) row.mean_partial_size += s.size();
          row.mean_partial_size /= static_cast<double>(h.num_coarse);
        }
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  });
  detail::write_file(out / ("sweep_" + parameter + ".csv"), format_sweep_csv(parameter, rows));
  return rows;
}

}  // namespace hdcnn
