// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "hdcnn/tensor.hpp"

namespace hdcnn {

/// Probabilities are clamped here before the log.
inline constexpr double kLogLossFloor = 1e-12;

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dLoss/dprobs, same shape as probs
};

/// Mean negative log-likelihood of `labels` (0-based) under row-wise
/// probabilities `probs` [n, C]. The gradient is -1/(n * max(p, floor)) at the
/// label entry and zero elsewhere.
LossResult multinomial_logistic_loss(const Tensor& probs, std::span<const int> labels);

}  // namespace hdcnn
