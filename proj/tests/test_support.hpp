// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

// Test-only oracles: central finite differences and random fixtures.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hdcnn/hierarchy.hpp"
#include "hdcnn/model.hpp"
#include "hdcnn/network.hpp"
#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning round-off into large relative errors.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of `f` with respect to every entry of `x`, perturbing in place.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                            double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f();
    x[i] = saved - eps;
    const double fm = f();
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

/// Small building block on 1x8x8 inputs, split after the first pool (index 3).
inline NetworkSpec tiny_block_spec(std::size_t classes) {
  NetworkSpec spec;
  spec.input = {1, 8, 8};
  spec.layers = {LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                 LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::flatten(),
                 LayerSpec::fully_connected(48, classes), LayerSpec::softmax()};
  spec.split_index = 3;
  return spec;
}

inline Hierarchy two_by_two_overlapping() {
  // Fine 0,1 -> coarse 0; fine 2,3 -> coarse 1; fine 1 also in coarse 1.
  const Tensor u = Tensor::from_rows({{0.8, 0.6, 0.1, 0.2}, {0.2, 0.4, 0.9, 0.8}});
  return extend_overlapping(std::vector<int>{0, 0, 1, 1}, u, 2.0);
}

inline HdcnnModel tiny_model(std::uint64_t seed, const Hierarchy& h) {
  Rng rng(seed);
  Network block = Network::initialized(tiny_block_spec(h.num_fine), rng);
  return assemble(block, 3, h, rng);
}

}  // namespace hdcnn::testing
