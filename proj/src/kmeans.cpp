// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/kmeans.hpp"

#include <limits>

#include "hdcnn/errors.hpp"

namespace hdcnn {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

namespace {

// Nearest center, lowest index on ties.
int nearest(const double* x, const Tensor& centers, std::size_t d, double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.dim(0); ++c) {
    const double dd = squared_distance(x, centers.data() + c * d, d);
    if (dd < best_d) {
      best_d = dd;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

double total_sse(const Tensor& points, const Tensor& centers, const std::vector<int>& assignment) {
  const std::size_t d = points.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < points.dim(0); ++i)
    s += squared_distance(points.data() + i * d, centers.data() + static_cast<std::size_t>(assignment[i]) * d, d);
  return s;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, int k, Rng& rng, int max_iterations) {
  if (points.rank() != 2) throw InputError("kmeans expects an [n, d] point matrix");
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (k < 1) throw InputError("kmeans needs k >= 1");
  if (static_cast<std::size_t>(k) > n) throw InputError("kmeans needs k <= number of points");
  const std::size_t kk = static_cast<std::size_t>(k);

  KMeansResult r;
  r.centers = Tensor({kk, d});
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < kk; ++c) {
    std::copy_n(points.data() + pick * d, d, r.centers.data() + c * d);
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_dist[i] = std::min(min_dist[i], squared_distance(points.data() + i * d, r.centers.data() + c * d, d));
      if (min_dist[i] > far_d) {
        far_d = min_dist[i];
        far = i;
      }
    }
    pick = far;
  }

  r.assignment.assign(n, -1);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(kk);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = nearest(points.data() + i * d, r.centers, d, &dist[i]);
      if (a != r.assignment[i]) {
        r.assignment[i] = a;
        changed = true;
      }
    }
    // Re-seed empty clusters from the worst-served points.
    std::fill(counts.begin(), counts.end(), 0);
    for (int a : r.assignment) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(r.assignment[i])] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == n) continue;
      --counts[static_cast<std::size_t>(r.assignment[far])];
      r.assignment[far] = static_cast<int>(c);
      counts[c] = 1;
      dist[far] = 0.0;
      std::copy_n(points.data() + far * d, d, r.centers.data() + c * d);
      changed = true;
    }
    r.iterations = it + 1;
    if (!changed && it > 0) {
      r.sse_trace.push_back(total_sse(points, r.centers, r.assignment));
      break;
    }
    // Update step.
    Tensor sums({kk, d});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = static_cast<std::size_t>(r.assignment[i]);
      for (std::size_t j = 0; j < d; ++j) sums[a * d + j] += points[i * d + j];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) r.centers[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
    }
    r.sse_trace.push_back(total_sse(points, r.centers, r.assignment));
  }
  r.sse = total_sse(points, r.centers, r.assignment);
  return r;
}

}  // namespace hdcnn
