// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "hdcnn/errors.hpp"
#include "hdcnn/loss.hpp"
#include "hdcnn/runtime.hpp"

namespace hdcnn {

void LabeledImages::validate() const {
  if (images.rank() != 4) throw InputError("images must be [N, C, H, W], got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) throw InputError("image and label counts differ");
}

LabeledImages subset(const LabeledImages& data, std::span<const std::size_t> rows) {
  LabeledImages out;
  out.images = gather_rows(data.images, rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(data.labels.at(r));
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InputError("minibatch size must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be finite and non-negative");
  if (!(schedule.initial_lr >= 0.0)) throw InputError("learning rate must be non-negative");
  if (schedule.drop_every < 0) throw InputError("drop interval must be non-negative");
}

long iteration_count(const TrainConfig& cfg, std::size_t n) {
  return static_cast<long>(cfg.epochs * ((n + cfg.batch_size - 1) / cfg.batch_size));
}

Tensor augment_batch(const Tensor& images, std::span<const std::size_t> rows, const TrainConfig& cfg, Rng& rng) {
  Tensor batch = gather_rows(images, rows);
  if (cfg.crop == 0 && !cfg.flip) return batch;
  const std::size_t n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t crop = cfg.crop == 0 ? std::min(h, w) : cfg.crop;
  if (crop > h || crop > w) throw InputError("crop size " + std::to_string(crop) + " exceeds the image");
  Tensor out({n, ch, crop, crop});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t top = cfg.crop == 0 ? (h - crop) / 2 : static_cast<std::size_t>(rng.below(h - crop + 1));
    const std::size_t left = cfg.crop == 0 ? (w - crop) / 2 : static_cast<std::size_t>(rng.below(w - crop + 1));
    const bool flip = cfg.flip && rng.below(2) == 1;
    std::vector<std::size_t> one{i};
    const Tensor view = crop_batch(gather_rows(batch, one), crop, top, left, flip);
    std::copy(view.storage().begin(), view.storage().end(), out.data() + i * view.size());
  }
  return out;
}

namespace {

struct StepStats {
  double loss = 0.0;
  double consistency_term = 0.0;
  std::size_t wrong = 0;
};

std::size_t count_wrong(const Tensor& probs, std::span<const int> labels) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (label_rank(probs.row(i), static_cast<std::size_t>(labels[i])) != 0) ++wrong;
  return wrong;
}

// Shuffled sequential minibatches. `step` receives the augmented batch, its
// labels and the iteration number.
template <typename Step>
void run_epochs(const LabeledImages& data, const TrainConfig& cfg, Rng& rng, const std::string& stage,
                const TrainLogger& log, const std::function<double(long)>& lr_at, Step&& step) {
  const std::size_t n = data.size();
  const long total = iteration_count(cfg, n);
  std::vector<std::size_t> order(n);
  long it = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size, ++it) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      const Tensor batch = augment_batch(data.images, rows, cfg, rng);
      std::vector<int> labels(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = data.labels[rows[r]];
      const double lr = lr_at(it);
      const StepStats s = step(batch, std::span<const int>(labels), it);
      if (log && cfg.log_every > 0 && (it % static_cast<long>(cfg.log_every) == 0 || it + 1 == total)) {
        log({stage, it, lr, s.loss, s.consistency_term,
             100.0 * static_cast<double>(s.wrong) / static_cast<double>(rows.size())});
      }
    }
  }
}

// SGD on a plain network whose input is produced by `input_of`.
void train_rear(Network& net, const LabeledImages& data, const TrainConfig& cfg, Rng& rng, const std::string& stage,
                const TrainLogger& log, const std::function<Tensor(const Tensor&)>& input_of) {
  OptimizerState opt = OptimizerState::for_params(net.params(), cfg.schedule, cfg.momentum, cfg.weight_decay);
  run_epochs(data, cfg, rng, stage, log, [&](long it) { return cfg.schedule.rate_at(it); },
             [&](const Tensor& batch, std::span<const int> labels, long it) {
               const Activations acts = forward(net, input_of ? input_of(batch) : batch);
               const LossResult loss = multinomial_logistic_loss(acts.output(), labels);
               if (!std::isfinite(loss.loss)) throw DivergedError(stage + ": non-finite loss", it);
               const Gradients g = backward(net, acts, loss.grad);
               try {
                 sgd_step(net.params(), g.params, opt);
               } catch (const DivergedError&) {
                 throw DivergedError(stage + ": non-finite gradient", it);
               }
               return StepStats{loss.loss, 0.0, count_wrong(acts.output(), labels)};
             });
}

}  // namespace

Network pretrain_building_block(const NetworkSpec& spec, const LabeledImages& data, const TrainConfig& cfg,
                                const TrainLogger& log) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw InputError("no training images for the building block");
  const Rng root(cfg.seed);
  Rng init = root.substream(0);
  Rng rng = root.substream(1);
  Network net = Network::initialized(spec, init);
  train_rear(net, data, cfg, rng, "pretrain-block", log, {});
  return net;
}

void pretrain_fine_component(HdcnnModel& model, std::size_t k, const LabeledImages& data, const TrainConfig& cfg,
                             const TrainLogger& log) {
  cfg.validate();
  data.validate();
  if (k >= model.fine.size()) throw InputError("fine component " + std::to_string(k) + " does not exist");
  FineComponent& comp = model.fine[k];
  std::vector<int> local(model.num_fine(), -1);
  for (std::size_t l = 0; l < comp.partial_set.size(); ++l) local[static_cast<std::size_t>(comp.partial_set[l])] = static_cast<int>(l);

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= local.size()) throw InputError("label out of range");
    if (local[static_cast<std::size_t>(y)] >= 0) rows.push_back(i);
  }
  if (rows.empty()) {
    throw InputError("fine component " + std::to_string(k) + " has no training images in its partial set");
  }
  LabeledImages own = subset(data, rows);
  for (int& y : own.labels) y = local[static_cast<std::size_t>(y)];

  Rng rng(cfg.seed);
  const Network& shared = model.shared;
  train_rear(comp.rear, own, cfg, rng, "pretrain-fine-" + std::to_string(k), log,
             [&shared](const Tensor& batch) { return predict(shared, batch); });
}

void pretrain_fine_components(HdcnnModel& model, const LabeledImages& data, const TrainConfig& cfg,
                              std::size_t workers, const TrainLogger& log) {
  const std::size_t kc = model.fine.size();
  std::vector<std::vector<TrainLogRecord>> records(kc);
  std::vector<std::exception_ptr> errors(kc);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t k = first; k < kc; k += stride) {
      try {
        TrainConfig own = cfg;
        own.seed = Rng::mix_seed(cfg.seed, k);
        pretrain_fine_component(model, k, data, own, [&records, k](const TrainLogRecord& r) { records[k].push_back(r); });
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, kc));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (log)
    for (const auto& per : records)
      for (const auto& r : per) log(r);
}

std::vector<double> consistency_targets(const Hierarchy& hierarchy, std::span<const std::size_t> class_sizes) {
  if (class_sizes.size() != hierarchy.num_fine) throw InputError("need one class size per fine category");
  std::vector<double> t(hierarchy.num_coarse, 0.0);
  for (std::size_t j = 0; j < class_sizes.size(); ++j) {
    if (class_sizes[j] == 0) throw InputError("class " + std::to_string(j + 1) + " has no training images");
    for (int k : hierarchy.overlapping[j]) t[static_cast<std::size_t>(k)] += static_cast<double>(class_sizes[j]);
  }
  const double total = std::accumulate(t.begin(), t.end(), 0.0);
  for (double& v : t) v /= total;
  return t;
}

HdcnnLoss hdcnn_loss_and_grad(const HdcnnModel& model, const Tensor& batch, std::span<const int> labels,
                              std::span<const double> targets, double lambda) {
  const std::size_t n = batch.dim(0), kc = model.num_coarse(), c = model.num_fine();
  if (labels.size() != n) throw InputError("label count differs from batch size");
  if (targets.size() != kc) throw InputError("need one consistency target per coarse category");
  const CoarseMapping& mapping = model.hierarchy.overlapping;

  const Activations shared_acts = forward(model.shared, batch);
  const Tensor& h = shared_acts.output();
  const Activations coarse_acts = forward(model.coarse, h);
  const Tensor& q = coarse_acts.output();

  // Aggregated and L1-normalized coarse weights.
  Tensor raw({n, kc});
  std::vector<double> raw_sum(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j)
      for (int k : mapping[j]) raw.at(i, static_cast<std::size_t>(k)) += q.at(i, j);
    for (std::size_t k = 0; k < kc; ++k) raw_sum[i] += raw.at(i, k);
  }
  Tensor b({n, kc});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < kc; ++k) b.at(i, k) = raw.at(i, k) / raw_sum[i];

  std::vector<Activations> fine_acts;
  fine_acts.reserve(kc);
  for (std::size_t k = 0; k < kc; ++k) fine_acts.push_back(forward(model.fine[k].rear, h));

  // p_ij = sum_k B_ik P_kij / sum_k B_ik.
  std::vector<double> denom(n, 0.0);
  Tensor p({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kc; ++k) {
      denom[i] += b.at(i, k);
      const auto& set = model.fine[k].partial_set;
      const Tensor& r = fine_acts[k].output();
      for (std::size_t l = 0; l < set.size(); ++l) p.at(i, static_cast<std::size_t>(set[l])) += b.at(i, k) * r.at(i, l);
    }
    for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= denom[i];
  }

  const LossResult nll = multinomial_logistic_loss(p, labels);
  const Tensor& g = nll.grad;
  std::vector<double> dev(kc, 0.0);
  double cons = 0.0;
  for (std::size_t k = 0; k < kc; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += b.at(i, k);
    mean /= static_cast<double>(n);
    dev[k] = targets[k] - mean;
    cons += dev[k] * dev[k];
  }
  cons *= lambda / 2.0;

  HdcnnLoss out;
  out.loss = nll.loss + cons;
  out.consistency_term = cons;
  if (!std::isfinite(out.loss)) throw DivergedError("non-finite fine-tuning loss", -1);

  // dE/dB through the quotient and the consistency penalty.
  Tensor db({n, kc});
  for (std::size_t i = 0; i < n; ++i) {
    double gp = 0.0;
    for (std::size_t j = 0; j < c; ++j) gp += g.at(i, j) * p.at(i, j);
    for (std::size_t k = 0; k < kc; ++k) {
      const auto& set = model.fine[k].partial_set;
      const Tensor& r = fine_acts[k].output();
      double gpk = 0.0;
      for (std::size_t l = 0; l < set.size(); ++l) gpk += g.at(i, static_cast<std::size_t>(set[l])) * r.at(i, l);
      db.at(i, k) = (gpk - gp) / denom[i] - lambda * dev[k] / static_cast<double>(n);
    }
  }
  // Through the L1 normalization and the aggregation.
  Tensor dq({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < kc; ++k) dot += db.at(i, k) * b.at(i, k);
    std::vector<double> draw(kc);
    for (std::size_t k = 0; k < kc; ++k) draw[k] = (db.at(i, k) - dot) / raw_sum[i];
    for (std::size_t j = 0; j < c; ++j)
      for (int k : mapping[j]) dq.at(i, j) += draw[static_cast<std::size_t>(k)];
  }

  Gradients coarse_g = backward(model.coarse, coarse_acts, dq, true);
  Tensor dh = std::move(coarse_g.input);
  out.grads.coarse = std::move(coarse_g.params);
  out.grads.fine.reserve(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    const auto& set = model.fine[k].partial_set;
    Tensor dr({n, set.size()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < set.size(); ++l)
        dr.at(i, l) = g.at(i, static_cast<std::size_t>(set[l])) * b.at(i, k) / denom[i];
    Gradients fg = backward(model.fine[k].rear, fine_acts[k], dr, true);
    for (std::size_t e = 0; e < dh.size(); ++e) dh[e] += fg.input[e];
    out.grads.fine.push_back(std::move(fg.params));
  }
  out.grads.shared = backward(model.shared, shared_acts, dh).params;
  out.probs = std::move(p);
  return out;
}

void finetune(HdcnnModel& model, const LabeledImages& data, std::span<const double> targets,
              const TrainConfig& cfg, const TrainLogger& log) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw InputError("no training images for fine-tuning");
  auto make = [&](const ParamSet& p) {
    return OptimizerState::for_params(p, cfg.schedule, cfg.momentum, cfg.weight_decay);
  };
  OptimizerState shared_opt = make(model.shared.params());
  OptimizerState coarse_opt = make(model.coarse.params());
  std::vector<OptimizerState> fine_opt;
  for (const auto& f : model.fine) fine_opt.push_back(make(f.rear.params()));

  Rng rng(cfg.seed);
  run_epochs(data, cfg, rng, "finetune", log, [&](long it) { return cfg.schedule.rate_at(it); },
             [&](const Tensor& batch, std::span<const int> labels, long it) {
               HdcnnLoss r;
               try {
                 r = hdcnn_loss_and_grad(model, batch, labels, targets, cfg.lambda);
               } catch (const DivergedError&) {
                 throw DivergedError("finetune: non-finite loss", it);
               }
               const bool finite = all_finite(r.grads.shared) && all_finite(r.grads.coarse) &&
                                   std::all_of(r.grads.fine.begin(), r.grads.fine.end(),
                                               [](const ParamSet& p) { return all_finite(p); });
               if (!finite) throw DivergedError("finetune: non-finite gradient", it);
               sgd_step(model.shared.params(), r.grads.shared, shared_opt);
               sgd_step(model.coarse.params(), r.grads.coarse, coarse_opt);
               for (std::size_t k = 0; k < model.fine.size(); ++k)
                 sgd_step(model.fine[k].rear.params(), r.grads.fine[k], fine_opt[k]);
               return StepStats{r.loss, r.consistency_term, count_wrong(r.probs, labels)};
             });
}

}  // namespace hdcnn
