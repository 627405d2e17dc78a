// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hdcnn/conditional.hpp"
#include "hdcnn/hierarchy.hpp"
#include "hdcnn/network.hpp"
#include "hdcnn/rng.hpp"

namespace hdcnn {

/// Rear layers specialized on one coarse category. `partial_set` doubles as
/// the label table: local output i is fine category partial_set[i].
struct FineComponent {
  int coarse_id = 0;
  std::vector<int> partial_set;
  Network rear;

  friend bool operator==(const FineComponent&, const FineComponent&) = default;
};

/// Shared prefix, coarse component (full C-way rear + fine-to-coarse
/// aggregation over the overlapping mapping) and K fine components.
struct HdcnnModel {
  Network shared;
  Network coarse;
  std::vector<FineComponent> fine;
  Hierarchy hierarchy;

  std::size_t num_coarse() const { return hierarchy.num_coarse; }
  std::size_t num_fine() const { return hierarchy.num_fine; }
  std::size_t parameter_count() const;
  void validate() const;

  friend bool operator==(const HdcnnModel&, const HdcnnModel&) = default;
};

/// Builds the model from a trained building block split at `split_index`.
/// Shared and coarse parameters are exact copies; every fine component copies
/// the rear layers except its final classifier, which is re-initialized from
/// `rng` with width |S^c_k|.
HdcnnModel assemble(const Network& block, std::size_t split_index, const Hierarchy& hierarchy, Rng& rng);

/// Coarse probabilities B [n, K] for a batch of images.
Tensor coarse_forward(const HdcnnModel& model, const Tensor& batch);
/// Same, starting from the shared prefix output.
Tensor coarse_from_shared(const HdcnnModel& model, const Tensor& shared_out);

/// Fine component k on shared activations, embedded as [n, C] with zeros
/// outside the partial set.
Tensor fine_forward(const HdcnnModel& model, std::size_t k, const Tensor& shared_out);
/// Scatter [n, |S|] partial probabilities into [n, C].
Tensor embed_partial(const Tensor& partial, std::span<const int> partial_set, std::size_t num_fine);

/// p = sum_{k in mask} B_k p_k / sum_{k in mask} B_k. `partials[k]` must be
/// filled for every k in the mask. When the masked weights sum to zero the
/// component with the largest B_k overall is used alone (it must be filled).
std::vector<double> probabilistic_average(std::span<const double> coarse,
                                          std::span<const std::vector<double>> partials, std::span<const int> mask);

struct FinalPrediction {
  std::vector<double> p;       // length C
  std::vector<double> coarse;  // length K, zero outside the executed set
  std::vector<int> executed;   // ascending fine component ids
};

/// Shared prefix runs once per image; coarse and every executed fine
/// component reuse it.
std::vector<FinalPrediction> full_forward(const HdcnnModel& model, const Tensor& batch, const ExecPolicy& policy);

/// Stacks final probabilities into [n, C].
Tensor stack_predictions(const std::vector<FinalPrediction>& preds);

}  // namespace hdcnn
