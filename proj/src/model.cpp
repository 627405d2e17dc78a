// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/model.hpp"

#include <algorithm>

#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace

std::size_t HdcnnModel::parameter_count() const {
  std::size_t n = shared.parameter_count() + coarse.parameter_count();
  for (const auto& f : fine) n += f.rear.parameter_count();
  return n;
}

void HdcnnModel::validate() const {
  hierarchy.validate();
  if (fine.size() != hierarchy.num_coarse)
    throw InputError("model has " + std::to_string(fine.size()) + " fine components for K=" +
                     std::to_string(hierarchy.num_coarse));
  if (coarse.label_count() != hierarchy.num_fine) throw InputError("coarse component width differs from C");
  if (coarse.spec().input != shared.output_shape()) throw InputError("coarse component input differs from shared output");
  for (std::size_t k = 0; k < fine.size(); ++k) {
    const auto& f = fine[k];
    if (f.coarse_id != static_cast<int>(k)) throw InputError("fine components must be ordered by coarse id");
    if (f.partial_set != hierarchy.partial_sets[k])
      throw InputError("fine component " + std::to_string(k + 1) + " partial set differs from the hierarchy");
    if (f.rear.label_count() != f.partial_set.size())
      throw InputError("fine component " + std::to_string(k + 1) + " classifier width differs from its partial set");
    if (f.rear.spec().input != shared.output_shape())
      throw InputError("fine component " + std::to_string(k + 1) + " input differs from shared output");
  }
}

HdcnnModel assemble(const Network& block, std::size_t split_index, const Hierarchy& hierarchy, Rng& rng) {
  hierarchy.validate();
  const NetworkSpec& spec = block.spec();
  if (block.label_count() != hierarchy.num_fine)
    throw InputError("building block predicts " + std::to_string(block.label_count()) +
                     " classes but the hierarchy has " + std::to_string(hierarchy.num_fine));
  const std::size_t classifier = spec.classifier_index();
  if (split_index > classifier)
    throw InputError("split index " + std::to_string(split_index) + " leaves the final classifier in the shared layers");

  HdcnnModel model;
  model.hierarchy = hierarchy;
  model.shared = block.slice(0, split_index);
  model.coarse = block.slice(split_index, spec.layers.size());
  const std::size_t local_classifier = classifier - split_index;
  for (std::size_t k = 0; k < hierarchy.num_coarse; ++k) {
    FineComponent f;
    f.coarse_id = static_cast<int>(k);
    f.partial_set = hierarchy.partial_sets[k];
    NetworkSpec rear_spec = model.coarse.spec();
    rear_spec.layers[local_classifier].out = f.partial_set.size();
    Network rear(rear_spec);
    for (std::size_t i = 0; i < rear_spec.layers.size(); ++i) {
      if (i == local_classifier) {
        init_layer(rear_spec.layers[i], rear.params()[i], rng);
      } else {
        rear.params()[i] = model.coarse.params()[i];
      }
    }
    f.rear = std::move(rear);
    model.fine.push_back(std::move(f));
  }
  model.validate();
  return model;
}

Tensor coarse_from_shared(const HdcnnModel& model, const Tensor& shared_out) {
  return aggregate_coarse(predict(model.coarse, shared_out), model.hierarchy.overlapping, model.num_coarse());
}

Tensor coarse_forward(const HdcnnModel& model, const Tensor& batch) {
  return coarse_from_shared(model, predict(model.shared, batch));
}

Tensor embed_partial(const Tensor& partial, std::span<const int> partial_set, std::size_t num_fine) {
  if (partial.rank() != 2 || partial.dim(1) != partial_set.size())
    throw InputError("partial prediction width differs from its partial set");
  const std::size_t n = partial.dim(0);
  Tensor out({n, num_fine});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < partial_set.size(); ++j)
      out.at(i, static_cast<std::size_t>(partial_set[j])) = partial.at(i, j);
  return out;
}

Tensor fine_forward(const HdcnnModel& model, std::size_t k, const Tensor& shared_out) {
  if (k >= model.fine.size())
    throw InputError("fine component " + std::to_string(k) + " out of range (K=" + std::to_string(model.fine.size()) + ")");
  const FineComponent& f = model.fine[k];
  return embed_partial(predict(f.rear, shared_out), f.partial_set, model.num_fine());
}

std::vector<double> probabilistic_average(std::span<const double> coarse,
                                          std::span<const std::vector<double>> partials, std::span<const int> mask) {
  if (partials.size() != coarse.size()) throw InputError("need one partial prediction slot per coarse category");
  double denom = 0.0;
  std::size_t width = 0;
  for (int k : mask) {
    if (k < 0 || static_cast<std::size_t>(k) >= coarse.size()) throw InputError("mask id out of range");
    const auto& pk = partials[static_cast<std::size_t>(k)];
    if (pk.empty()) throw InputError("missing prediction for fine component " + std::to_string(k));
    width = pk.size();
    denom += coarse[static_cast<std::size_t>(k)];
  }
  if (mask.size() == 1 && denom > 0.0) return partials[static_cast<std::size_t>(mask[0])];
  if (denom <= 0.0) {
    const auto& best = partials[argmax(coarse)];
    if (best.empty()) throw InputError("fallback component has no prediction");
    return best;
  }
  std::vector<double> p(width, 0.0);
  for (int k : mask) {
    const double w = coarse[static_cast<std::size_t>(k)];
    const auto& pk = partials[static_cast<std::size_t>(k)];
    if (pk.size() != width) throw InputError("partial predictions differ in width");
    for (std::size_t j = 0; j < width; ++j) p[j] += w * pk[j];
  }
  for (double& v : p) v /= denom;
  return p;
}

std::vector<FinalPrediction> full_forward(const HdcnnModel& model, const Tensor& batch, const ExecPolicy& policy) {
  const std::size_t n = batch.dim(0);
  const std::size_t kc = model.num_coarse();
  const std::size_t c = model.num_fine();
  const Tensor shared_out = predict(model.shared, batch);
  const Tensor coarse = coarse_from_shared(model, shared_out);

  std::vector<std::vector<int>> masks(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (policy.mode == ExecPolicy::Mode::kAll) {
      masks[i].resize(kc);
      for (std::size_t k = 0; k < kc; ++k) masks[i][k] = static_cast<int>(k);
    } else {
      masks[i] = conditional_mask(coarse.row(i), policy.beta);
    }
  }

  // Per-image executed set: the mask, plus the argmax fallback when the
  // masked weights vanish.
  std::vector<std::vector<int>> executed = masks;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int k : masks[i]) denom += coarse.at(i, static_cast<std::size_t>(k));
    if (denom <= 0.0) {
      const int best = static_cast<int>(argmax(coarse.row(i)));
      if (!std::binary_search(executed[i].begin(), executed[i].end(), best)) {
        executed[i].insert(std::upper_bound(executed[i].begin(), executed[i].end(), best), best);
      }
    }
  }

  // Run each component once over the images that need it.
  std::vector<std::vector<std::vector<double>>> partials(n, std::vector<std::vector<double>>(kc));
  for (std::size_t k = 0; k < kc; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (std::binary_search(executed[i].begin(), executed[i].end(), static_cast<int>(k))) rows.push_back(i);
    if (rows.empty()) continue;
    const Tensor pk = fine_forward(model, k, gather_rows(shared_out, rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = pk.row(r);
      partials[rows[r]][k].assign(row.begin(), row.end());
    }
  }

  std::vector<FinalPrediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    FinalPrediction& fp = out[i];
    fp.coarse.assign(kc, 0.0);
    for (int k : masks[i]) fp.coarse[static_cast<std::size_t>(k)] = coarse.at(i, static_cast<std::size_t>(k));
    fp.p = probabilistic_average(coarse.row(i), partials[i], masks[i]);
    fp.executed = executed[i];
    if (fp.p.size() != c) throw StateError("final prediction width differs from C");
  }
  return out;
}

Tensor stack_predictions(const std::vector<FinalPrediction>& preds) {
  if (preds.empty()) return Tensor();
  const std::size_t c = preds.front().p.size();
  Tensor out({preds.size(), c});
  for (std::size_t i = 0; i < preds.size(); ++i) std::copy(preds[i].p.begin(), preds[i].p.end(), out.data() + i * c);
  return out;
}

}  // namespace hdcnn
