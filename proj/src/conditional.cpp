// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/conditional.hpp"

#include <cmath>

#include "hdcnn/errors.hpp"

namespace hdcnn {

ExecPolicy ExecPolicy::threshold(double beta) {
  if (!(beta > 0.0) || std::isnan(beta)) throw InputError("beta must be positive");
  return {Mode::kThreshold, beta};
}

double coarse_threshold(double beta, std::size_t num_coarse) {
  if (!(beta > 0.0)) throw InputError("beta must be positive");
  if (std::isinf(beta)) return 0.0;
  return 1.0 / (beta * static_cast<double>(num_coarse));
}

std::vector<int> conditional_mask(std::span<const double> coarse, double beta) {
  if (coarse.empty()) throw InputError("empty coarse prediction");
  const double bt = coarse_threshold(beta, coarse.size());
  std::vector<int> mask;
  std::size_t best = 0;
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    if (coarse[k] >= bt) mask.push_back(static_cast<int>(k));
    if (coarse[k] > coarse[best]) best = k;
  }
  if (mask.empty()) mask.push_back(static_cast<int>(best));
  return mask;
}

}  // namespace hdcnn
