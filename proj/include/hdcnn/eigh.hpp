// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "hdcnn/tensor.hpp"

namespace hdcnn {

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Tensor vectors;              // [n, n], column i pairs with values[i]
};

inline constexpr double kEighSymmetryTolerance = 1e-9;
inline constexpr int kJacobiMaxSweeps = 100;

/// Cyclic Jacobi eigensolver for a real symmetric matrix. Sweeps stop once
/// the off-diagonal Frobenius norm falls to 1e-12 of the matrix norm.
EigenDecomposition eigh_symmetric(const Tensor& m);

}  // namespace hdcnn
