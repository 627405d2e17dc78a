// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

struct KMeansResult {
  std::vector<int> assignment;  // per point, in [0, k)
  Tensor centers;               // [k, d]
  double sse = 0.0;
  int iterations = 0;
  std::vector<double> sse_trace;  // SSE after each assignment step
};

inline constexpr int kKMeansMaxIterations = 300;

/// Lloyd's algorithm over the rows of `points` [n, d].
///
/// Seeding: the first center is a uniformly drawn point, each further center
/// is the point farthest from the centers chosen so far (lowest index on
/// ties). Iterates until assignments stop changing or `max_iterations`.
/// A cluster that becomes empty is re-seeded with the point farthest from its
/// own center; when every point already coincides with a center the cluster
/// stays empty and keeps its previous center.
KMeansResult kmeans(const Tensor& points, int k, Rng& rng, int max_iterations = kKMeansMaxIterations);

double squared_distance(const double* a, const double* b, std::size_t d);

}  // namespace hdcnn
