// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <thread>

#include "hdcnn/errors.hpp"

namespace hdcnn {

Tensor crop_batch(const Tensor& batch, std::size_t crop, std::size_t top, std::size_t left, bool flip) {
  if (batch.rank() != 4) throw InputError("expected an [N, C, H, W] batch, got " + shape_string(batch.shape()));
  const std::size_t n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (crop == 0 || crop > h || crop > w) {
    throw InputError("crop size " + std::to_string(crop) + " does not fit a " + std::to_string(h) + "x" +
                     std::to_string(w) + " image");
  }
  if (top + crop > h || left + crop > w) throw InputError("crop window leaves the image");
  Tensor out({n, ch, crop, crop});
  double* o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double* plane = batch.data() + (i * ch + c) * h * w;
      for (std::size_t y = 0; y < crop; ++y) {
        const double* src = plane + (top + y) * w + left;
        for (std::size_t x = 0; x < crop; ++x) *o++ = flip ? src[crop - 1 - x] : src[x];
      }
    }
  }
  return out;
}

Tensor center_crop(const Tensor& batch, std::size_t crop) {
  if (batch.rank() != 4) throw InputError("expected an [N, C, H, W] batch, got " + shape_string(batch.shape()));
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  if (crop == 0 || crop > h || crop > w) throw InputError("crop size " + std::to_string(crop) + " exceeds the image");
  return crop_batch(batch, crop, (h - crop) / 2, (w - crop) / 2, false);
}

std::vector<Tensor> ten_views(const Tensor& batch, std::size_t crop) {
  if (batch.rank() != 4) throw InputError("expected an [N, C, H, W] batch, got " + shape_string(batch.shape()));
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  if (crop == 0 || crop > h || crop > w) throw InputError("crop size " + std::to_string(crop) + " exceeds the image");
  const std::size_t corners[5][2] = {
      {0, 0}, {0, w - crop}, {h - crop, 0}, {h - crop, w - crop}, {(h - crop) / 2, (w - crop) / 2}};
  std::vector<Tensor> views;
  views.reserve(kViewCount);
  for (const auto& c : corners) {
    views.push_back(crop_batch(batch, crop, c[0], c[1], false));
    views.push_back(crop_batch(batch, crop, c[0], c[1], true));
  }
  return views;
}

Predictor network_predictor(const Network& net) {
  return [&net](const Tensor& batch) { return BatchPrediction{predict(net, batch), {}}; };
}

Predictor averaged_predictor(std::span<const Network> nets) {
  if (nets.empty()) throw InputError("model averaging needs at least one network");
  return [nets](const Tensor& batch) {
    Tensor acc = predict(nets[0], batch);
    for (std::size_t m = 1; m < nets.size(); ++m) {
      const Tensor p = predict(nets[m], batch);
      if (p.shape() != acc.shape()) throw InputError("averaged networks disagree on output shape");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
    }
    if (nets.size() > 1) {
      const double inv = 1.0 / static_cast<double>(nets.size());
      for (double& v : acc.values()) v *= inv;
    }
    return BatchPrediction{std::move(acc), {}};
  };
}

Predictor model_predictor(const HdcnnModel& model, const ExecPolicy& policy) {
  return [&model, policy](const Tensor& batch) {
    const auto preds = full_forward(model, batch, policy);
    BatchPrediction out{stack_predictions(preds), std::vector<double>(preds.size())};
    for (std::size_t i = 0; i < preds.size(); ++i) out.executed[i] = static_cast<double>(preds[i].executed.size());
    return out;
  };
}

BatchPrediction multiview_predict(const Predictor& predictor, const Tensor& batch, std::size_t crop, ViewMode mode) {
  if (mode == ViewMode::kSingle) return predictor(crop == 0 ? batch : center_crop(batch, crop));
  const std::size_t c = crop == 0 ? std::min(batch.dim(2), batch.dim(3)) : crop;
  BatchPrediction acc;
  bool first = true;
  for (const Tensor& view : ten_views(batch, c)) {
    BatchPrediction p = predictor(view);
    if (first) {
      acc = std::move(p);
      first = false;
      continue;
    }
    for (std::size_t i = 0; i < acc.probs.size(); ++i) acc.probs[i] += p.probs[i];
    for (std::size_t i = 0; i < acc.executed.size(); ++i) acc.executed[i] += p.executed[i];
  }
  const double inv = 1.0 / static_cast<double>(kViewCount);
  for (double& v : acc.probs.values()) v *= inv;
  for (double& v : acc.executed) v *= inv;
  return acc;
}

std::size_t label_rank(std::span<const double> p, std::size_t label) {
  if (label >= p.size()) throw InputError("label outside the prediction vector");
  const double py = p[label];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > py || (p[j] == py && j < label)) ++rank;
  }
  return rank;
}

EvalReport evaluate(const Predictor& predictor, const Tensor& images, std::span<const int> labels,
                    const EvalOptions& options) {
  if (images.rank() == 0 || images.dim(0) == 0) throw InputError("cannot evaluate an empty dataset");
  const std::size_t n = images.dim(0);
  if (labels.size() != n) throw InputError("label count differs from image count");
  if (options.batch_size == 0) throw InputError("evaluation batch size must be positive");
  const std::size_t batches = (n + options.batch_size - 1) / options.batch_size;
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, batches));

  struct BatchStats {
    std::size_t top1_wrong = 0;
    std::size_t top5_wrong = 0;
    double executed = 0.0;
    std::size_t classes = 0;
  };
  std::vector<BatchStats> stats(batches);
  std::vector<std::exception_ptr> errors(workers);

  auto run = [&](std::size_t worker) {
    try {
      for (std::size_t b = worker; b < batches; b += workers) {
        const std::size_t lo = b * options.batch_size, hi = std::min(n, lo + options.batch_size);
        std::vector<std::size_t> rows(hi - lo);
        std::iota(rows.begin(), rows.end(), lo);
        const BatchPrediction pred =
            multiview_predict(predictor, gather_rows(images, rows), options.crop, options.view);
        BatchStats& s = stats[b];
        s.classes = pred.probs.row_size();
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const int y = labels[lo + r];
          if (y < 0 || static_cast<std::size_t>(y) >= s.classes) throw InputError("label out of range");
          const std::size_t rank = label_rank(pred.probs.row(r), static_cast<std::size_t>(y));
          if (rank >= 1) ++s.top1_wrong;
          if (rank >= 5) ++s.top5_wrong;
          if (!pred.executed.empty()) s.executed += pred.executed[r];
        }
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };

  const auto start = std::chrono::steady_clock::now();
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  const auto stop = std::chrono::steady_clock::now();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchStats total;
  for (const BatchStats& s : stats) {
    total.top1_wrong += s.top1_wrong;
    total.top5_wrong += s.top5_wrong;
    total.executed += s.executed;
    total.classes = s.classes;
  }
  EvalReport r;
  r.images = n;
  r.workers = workers;
  r.top1_err = 100.0 * static_cast<double>(total.top1_wrong) / static_cast<double>(n);
  if (total.classes >= 5) r.top5_err = 100.0 * static_cast<double>(total.top5_wrong) / static_cast<double>(n);
  r.mean_executed_components = total.executed / static_cast<double>(n);
  r.wall_time_sec = std::chrono::duration<double>(stop - start).count();
  return r;
}

std::string QuantizedLayer::name() const {
  return (component < 0 ? std::string("coarse") : "fine" + std::to_string(component + 1)) + "." + std::to_string(layer);
}

Tensor weight_matrix(const LayerParams& params) {
  const Tensor& w = params.weight;
  if (w.rank() < 2) throw InputError("layer has no weight matrix");
  return Tensor({w.dim(0), w.size() / w.dim(0)}, w.storage());
}

std::vector<std::size_t> largest_rear_layers(const HdcnnModel& model, std::size_t count) {
  const std::size_t layers = model.coarse.params().size();
  std::vector<std::size_t> totals(layers, 0);
  for (std::size_t l = 0; l < layers; ++l) {
    totals[l] += model.coarse.params()[l].weight.size();
    for (const auto& f : model.fine) totals[l] += f.rear.params()[l].weight.size();
  }
  std::vector<std::size_t> order;
  for (std::size_t l = 0; l < layers; ++l)
    if (totals[l] > 0) order.push_back(l);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return totals[a] > totals[b]; });
  if (order.size() > count) order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

CompressedModel compress_model(const HdcnnModel& model, std::span<const std::size_t> rear_layers, std::size_t s,
                               std::size_t k, std::uint64_t seed) {
  CompressedModel out{model, {}};
  std::uint64_t stream = 0;
  auto quantize = [&](Network& net, int component) {
    for (std::size_t l : rear_layers) {
      if (l >= net.params().size() || net.params()[l].weight.empty()) {
        throw InputError("rear layer " + std::to_string(l) + " has no weight matrix");
      }
      LayerParams& p = net.params()[l];
      const Tensor w = weight_matrix(p);
      QuantizedLayer q;
      q.component = component;
      q.layer = l;
      q.seed = Rng::mix_seed(seed, stream++);
      Rng rng(q.seed);
      q.matrix = pq_compress(w, s, std::min(k, w.dim(0)), rng);
      const Tensor rec = reconstruct(q.matrix);
      std::copy(rec.storage().begin(), rec.storage().end(), p.weight.storage().begin());
      out.layers.push_back(std::move(q));
    }
  };
  quantize(out.model.coarse, -1);
  for (std::size_t f = 0; f < out.model.fine.size(); ++f) quantize(out.model.fine[f].rear, static_cast<int>(f));
  return out;
}

HdcnnModel with_quantized(const HdcnnModel& model, std::span<const QuantizedLayer> layers) {
  HdcnnModel out = model;
  for (const QuantizedLayer& q : layers) {
    if (q.component >= static_cast<int>(out.fine.size())) throw InputError("quantized layer " + q.name() + " has no component");
    Network& net = q.component < 0 ? out.coarse : out.fine[static_cast<std::size_t>(q.component)].rear;
    if (q.layer >= net.params().size()) throw InputError("quantized layer " + q.name() + " does not exist");
    Tensor& w = net.params()[q.layer].weight;
    if (w.empty() || w.dim(0) != q.matrix.m || w.size() != q.matrix.m * q.matrix.n)
      throw InputError("quantized layer " + q.name() + " does not match the weight shape");
    const Tensor rec = reconstruct(q.matrix);
    std::copy(rec.storage().begin(), rec.storage().end(), w.storage().begin());
  }
  return out;
}

std::size_t raw_parameter_bytes(const HdcnnModel& model) { return model.parameter_count() * sizeof(double); }

std::size_t compressed_parameter_bytes(const CompressedModel& compressed) {
  std::size_t bytes = raw_parameter_bytes(compressed.model);
  for (const QuantizedLayer& q : compressed.layers) {
    bytes -= q.matrix.m * q.matrix.n * sizeof(double);
    bytes += q.matrix.storage_bytes();
  }
  return bytes;
}

}  // namespace hdcnn
