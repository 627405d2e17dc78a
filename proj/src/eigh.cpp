// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/eigh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace {

double off_diagonal_norm(const Tensor& a) {
  const std::size_t n = a.dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += a.at(i, j) * a.at(i, j);
  return std::sqrt(s);
}

}  // namespace

EigenDecomposition eigh_symmetric(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw InputError("eigh needs a square matrix");
  const std::size_t n = m.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > kEighSymmetryTolerance)
        throw InputError("eigh input is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");

  Tensor a = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a.at(i, j) = a.at(j, i) = 0.5 * (m.at(i, j) + m.at(j, i));
  Tensor v({n, n});
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  const double threshold = 1e-12 * std::max(frobenius_norm(a), 1e-300);
  for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a) <= threshold) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        a.at(p, q) = a.at(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });

  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = Tensor({n, n});
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.values[c] = a.at(src, src);
    // Sign convention: the largest-magnitude component is positive.
    std::size_t big = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v.at(k, src)) > std::abs(v.at(big, src)) + 1e-12) big = k;
    const double sign = v.at(big, src) < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors.at(k, c) = sign * v.at(k, src);
  }
  return out;
}

}  // namespace hdcnn
