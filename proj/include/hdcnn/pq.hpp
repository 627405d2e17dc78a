// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

inline constexpr std::size_t kQuantizedHeaderBytes = 20;
inline constexpr std::size_t kMaxQuantizedCenters = 256;

/// Product-quantized m x n matrix. Row r, segment i is approximated by
/// columns [i*s, (i+1)*s) of center row indices[r*(n/s) + i].
struct QuantizedMatrix {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t s = 0;
  std::size_t k = 0;
  std::vector<std::uint8_t> indices;  // m x (n/s), row-major
  std::vector<float> centers;         // k x n, row-major

  std::size_t segments() const { return s == 0 ? 0 : n / s; }
  std::uint8_t index(std::size_t row, std::size_t segment) const { return indices[row * segments() + segment]; }
  /// Encoded size in bytes: header + m*(n/s) + 4*k*n.
  std::size_t storage_bytes() const { return kQuantizedHeaderBytes + m * segments() + 4 * k * n; }
  void validate() const;

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;
};

struct PqFit {
  QuantizedMatrix matrix;
  double kmeans_sse = 0.0;  // summed within-cluster SSE over all segments
};

/// Clusters the rows of every width-s segment of `w` into k centers.
PqFit pq_fit(const Tensor& w, std::size_t s, std::size_t k, Rng& rng);
QuantizedMatrix pq_compress(const Tensor& w, std::size_t s, std::size_t k, Rng& rng);

/// Dense m x n reconstruction (centers upcast to double).
Tensor reconstruct(const QuantizedMatrix& q);

/// y = W x through per-segment center dot products and table lookups.
std::vector<double> pq_forward(const QuantizedMatrix& q, std::span<const double> x);
/// y = W x by reconstructing W first.
std::vector<double> pq_forward_reconstructed(const QuantizedMatrix& q, std::span<const double> x);

/// (32 m n) / (32 k n + 8 m n / s).
double compression_factor(double m, double n, double s, double k);

std::string encode_quantized(const QuantizedMatrix& q);
QuantizedMatrix decode_quantized(std::string_view bytes);
void write_quantized(const QuantizedMatrix& q, const std::filesystem::path& path);
QuantizedMatrix read_quantized(const std::filesystem::path& path);

}  // namespace hdcnn
