// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "hdcnn/errors.hpp"

namespace hdcnn {

LossResult multinomial_logistic_loss(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2) throw InputError("loss expects [n, C] probabilities");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n) throw InputError("label count does not match batch size");
  if (n == 0) throw InputError("loss over an empty batch");
  LossResult r;
  r.grad = Tensor(probs.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw InputError("label " + std::to_string(y) + " out of range");
    const double p = std::max(probs.at(i, static_cast<std::size_t>(y)), kLogLossFloor);
    r.loss -= std::log(p);
    r.grad.at(i, static_cast<std::size_t>(y)) = -inv_n / p;
  }
  r.loss *= inv_n;
  return r;
}

}  // namespace hdcnn
