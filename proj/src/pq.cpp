// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/pq.hpp"

#include "binary_io.hpp"
#include "hdcnn/errors.hpp"
#include "hdcnn/kmeans.hpp"

namespace hdcnn {

namespace {

constexpr std::string_view kQuantizedMagic = "HDQ1";

void check_hyperparameters(std::size_t m, std::size_t n, std::size_t s, std::size_t k) {
  if (s == 0 || n % s != 0) {
    throw InputError("segment width s=" + std::to_string(s) + " must divide n=" + std::to_string(n));
  }
  if (k == 0) throw InputError("need k >= 1 centers");
  if (k > kMaxQuantizedCenters) throw InputError("k=" + std::to_string(k) + " exceeds the 8-bit index range");
  if (k > m) throw InputError("k=" + std::to_string(k) + " exceeds the row count m=" + std::to_string(m));
}

}  // namespace

void QuantizedMatrix::validate() const {
  check_hyperparameters(m, n, s, k);
  if (indices.size() != m * segments()) throw InputError("index table has the wrong size");
  if (centers.size() != k * n) throw InputError("center table has the wrong size");
  for (std::uint8_t i : indices) {
    if (i >= k) throw InputError("center index out of range");
  }
}

PqFit pq_fit(const Tensor& w, std::size_t s, std::size_t k, Rng& rng) {
  if (w.rank() != 2) throw InputError("pq_compress expects an m x n matrix");
  const std::size_t m = w.dim(0), n = w.dim(1);
  check_hyperparameters(m, n, s, k);

  PqFit fit;
  QuantizedMatrix& q = fit.matrix;
  q.m = m;
  q.n = n;
  q.s = s;
  q.k = k;
  q.indices.assign(m * q.segments(), 0);
  q.centers.assign(k * n, 0.0f);
  Tensor seg({m, s});
  for (std::size_t i = 0; i < q.segments(); ++i) {
    for (std::size_t r = 0; r < m; ++r) std::copy_n(w.data() + r * n + i * s, s, seg.data() + r * s);
    const KMeansResult km = kmeans(seg, static_cast<int>(k), rng);
    fit.kmeans_sse += km.sse;
    for (std::size_t r = 0; r < m; ++r) q.indices[r * q.segments() + i] = static_cast<std::uint8_t>(km.assignment[r]);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < s; ++j) q.centers[c * n + i * s + j] = static_cast<float>(km.centers.at(c, j));
    }
  }
  return fit;
}

QuantizedMatrix pq_compress(const Tensor& w, std::size_t s, std::size_t k, Rng& rng) {
  return pq_fit(w, s, k, rng).matrix;
}

Tensor reconstruct(const QuantizedMatrix& q) {
  Tensor w({q.m, q.n});
  for (std::size_t r = 0; r < q.m; ++r) {
    for (std::size_t i = 0; i < q.segments(); ++i) {
      const float* c = q.centers.data() + q.index(r, i) * q.n + i * q.s;
      for (std::size_t j = 0; j < q.s; ++j) w.at(r, i * q.s + j) = static_cast<double>(c[j]);
    }
  }
  return w;
}

std::vector<double> pq_forward(const QuantizedMatrix& q, std::span<const double> x) {
  if (x.size() != q.n) {
    throw InputError("pq_forward input has length " + std::to_string(x.size()) + ", expected " + std::to_string(q.n));
  }
  const std::size_t segs = q.segments();
  std::vector<double> table(segs * q.k);
  for (std::size_t i = 0; i < segs; ++i) {
    for (std::size_t c = 0; c < q.k; ++c) {
      const float* cc = q.centers.data() + c * q.n + i * q.s;
      double dot = 0.0;
      for (std::size_t j = 0; j < q.s; ++j) dot += static_cast<double>(cc[j]) * x[i * q.s + j];
      table[i * q.k + c] = dot;
    }
  }
  std::vector<double> y(q.m, 0.0);
  for (std::size_t r = 0; r < q.m; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < segs; ++i) acc += table[i * q.k + q.index(r, i)];
    y[r] = acc;
  }
  return y;
}

std::vector<double> pq_forward_reconstructed(const QuantizedMatrix& q, std::span<const double> x) {
  if (x.size() != q.n) {
    throw InputError("pq_forward input has length " + std::to_string(x.size()) + ", expected " + std::to_string(q.n));
  }
  const Tensor w = reconstruct(q);
  std::vector<double> y(q.m, 0.0);
  for (std::size_t r = 0; r < q.m; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < q.n; ++j) acc += w.at(r, j) * x[j];
    y[r] = acc;
  }
  return y;
}

double compression_factor(double m, double n, double s, double k) {
  return (32.0 * m * n) / (32.0 * k * n + 8.0 * m * n / s);
}

std::string encode_quantized(const QuantizedMatrix& q) {
  q.validate();
  detail::ByteWriter w;
  w.magic(kQuantizedMagic);
  w.u32(static_cast<std::uint32_t>(q.m));
  w.u32(static_cast<std::uint32_t>(q.n));
  w.u32(static_cast<std::uint32_t>(q.s));
  w.u32(static_cast<std::uint32_t>(q.k));
  w.bytes(q.indices.data(), q.indices.size());
  for (float c : q.centers) w.f32(c);
  return w.take();
}

QuantizedMatrix decode_quantized(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kQuantizedMagic);
  QuantizedMatrix q;
  q.m = r.u32("m");
  q.n = r.u32("n");
  const std::size_t s_offset = r.offset();
  q.s = r.u32("s");
  q.k = r.u32("k");
  try {
    check_hyperparameters(q.m, q.n, q.s, q.k);
  } catch (const InputError& e) {
    throw ParseError(e.what(), s_offset);
  }
  q.indices.resize(q.m * q.segments());
  for (auto& i : q.indices) {
    const std::size_t at = r.offset();
    i = r.u8("index table");
    if (i >= q.k) throw ParseError("center index out of range", at);
  }
  q.centers.resize(q.k * q.n);
  for (float& c : q.centers) c = r.f32("center table");
  if (!r.done()) throw ParseError("trailing bytes after quantized matrix", r.offset());
  return q;
}

void write_quantized(const QuantizedMatrix& q, const std::filesystem::path& path) {
  detail::write_file(path, encode_quantized(q));
}

QuantizedMatrix read_quantized(const std::filesystem::path& path) { return decode_quantized(detail::read_file(path)); }

}  // namespace hdcnn
