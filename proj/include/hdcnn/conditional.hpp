// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hdcnn {

/// Which fine components run at inference. `kThreshold` evaluates only the
/// components whose coarse probability reaches 1 / (beta K); beta may be
/// +infinity, which keeps every component.
struct ExecPolicy {
  enum class Mode { kAll, kThreshold };
  Mode mode = Mode::kAll;
  double beta = 0.0;

  static ExecPolicy all() { return {}; }
  static ExecPolicy threshold(double beta);
};

/// B_t = 1 / (beta K); zero when beta is infinite.
double coarse_threshold(double beta, std::size_t num_coarse);

/// {k : B_k >= B_t}, ascending. Falls back to the single argmax (lowest
/// index on ties) when nothing clears the threshold.
std::vector<int> conditional_mask(std::span<const double> coarse, double beta);

}  // namespace hdcnn
