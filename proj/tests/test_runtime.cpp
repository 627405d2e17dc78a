// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "doctest.h"
#include "hdcnn/errors.hpp"
#include "hdcnn/pq.hpp"
#include "hdcnn/runtime.hpp"
#include "test_support.hpp"

using namespace hdcnn;
using hdcnn::testing::random_tensor;
using hdcnn::testing::tiny_model;
using hdcnn::testing::two_by_two_overlapping;

namespace {

// Values exactly representable in single precision.
Tensor float_exact_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = static_cast<double>(static_cast<int>(rng.below(17)) - 8) / 4.0;
  return t;
}

double reconstruction_sse(const Tensor& w, const QuantizedMatrix& q) {
  const Tensor r = reconstruct(q);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - r[i]) * (w[i] - r[i]);
  return s;
}

std::vector<double> dense_multiply(const Tensor& w, std::span<const double> x) {
  std::vector<double> y(w.dim(0), 0.0);
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t j = 0; j < w.dim(1); ++j) y[r] += w.at(r, j) * x[j];
  return y;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("compression factor") {
  CHECK(compression_factor(1024, 3456, 3, 128) == doctest::Approx(4.8).epsilon(0.005));
  CHECK(compression_factor(1024, 1024, 2, 256) == doctest::Approx(8.0 / 3.0));
  CHECK(compression_factor(4096, 25088, 14, 64) == doctest::Approx(29.87).epsilon(0.001));
  CHECK(compression_factor(4096, 4096, 4, 256) == doctest::Approx(8.0));
  // Byte accounting agrees with the formula.
  QuantizedMatrix q;
  q.m = 1024;
  q.n = 3456;
  q.s = 3;
  q.k = 128;
  const double bits_ratio = 32.0 * 1024 * 3456 / (8.0 * (q.storage_bytes() - kQuantizedHeaderBytes));
  CHECK(bits_ratio == doctest::Approx(compression_factor(1024, 3456, 3, 128)));
}

TEST_CASE("pq_compress validation") {
  Rng rng(3);
  const Tensor w = random_tensor({8, 6}, rng);
  CHECK_THROWS_AS(pq_compress(w, 4, 2, rng), InputError);
  CHECK_THROWS_AS(pq_compress(w, 0, 2, rng), InputError);
  CHECK_THROWS_AS(pq_compress(w, 3, 0, rng), InputError);
  CHECK_THROWS_AS(pq_compress(w, 3, 9, rng), InputError);
  const Tensor big = random_tensor({300, 2}, rng);
  CHECK_THROWS_AS(pq_compress(big, 2, 257, rng), InputError);
  CHECK_NOTHROW(pq_compress(big, 2, 256, rng));
}

TEST_CASE("pq reconstruction") {
  Rng rng(11);
  SUBCASE("identical rows reconstruct exactly") {
    const Tensor row = float_exact_tensor({1, 12}, rng);
    Tensor w({10, 12});
    for (std::size_t r = 0; r < 10; ++r) std::copy_n(row.data(), 12, w.data() + r * 12);
    for (std::size_t s : {1, 2, 3, 4, 6, 12}) {
      for (std::size_t k : {1, 3, 10}) {
        Rng r2(s * 100 + k);
        CHECK(reconstruct(pq_compress(w, s, k, r2)) == w);
      }
    }
  }
  SUBCASE("k equal to the distinct row count is lossless") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t distinct = 1 + rng.below(6);
      const Tensor base = float_exact_tensor({distinct, 8}, rng);
      Tensor w({20, 8});
      for (std::size_t r = 0; r < 20; ++r) {
        const std::size_t src = r < distinct ? r : rng.below(distinct);
        std::copy_n(base.data() + src * 8, 8, w.data() + r * 8);
      }
      Rng r2(trial);
      CHECK(reconstruct(pq_compress(w, 4, distinct, r2)) == w);
    }
  }
  SUBCASE("reconstruction error equals the k-means within-cluster error") {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor w = random_tensor({30, 12}, rng);
      Rng r2(trial);
      const PqFit fit = pq_fit(w, 3, 5, r2);
      // Independent recomputation: per segment, centers as means of the
      // assigned rows, then the summed squared deviation.
      const QuantizedMatrix& q = fit.matrix;
      double oracle = 0.0;
      for (std::size_t i = 0; i < q.segments(); ++i) {
        std::vector<std::vector<double>> sum(q.k, std::vector<double>(q.s, 0.0));
        std::vector<double> count(q.k, 0.0);
        for (std::size_t r = 0; r < q.m; ++r) {
          count[q.index(r, i)] += 1.0;
          for (std::size_t j = 0; j < q.s; ++j) sum[q.index(r, i)][j] += w.at(r, i * q.s + j);
        }
        for (std::size_t r = 0; r < q.m; ++r) {
          for (std::size_t j = 0; j < q.s; ++j) {
            const double c = sum[q.index(r, i)][j] / count[q.index(r, i)];
            oracle += (w.at(r, i * q.s + j) - c) * (w.at(r, i * q.s + j) - c);
          }
        }
      }
      CHECK(fit.kmeans_sse == doctest::Approx(oracle).epsilon(1e-12));
      // Centers are stored in single precision.
      CHECK(reconstruction_sse(w, q) == doctest::Approx(oracle).epsilon(1e-5));
    }
  }
  SUBCASE("error does not increase with k under matched seeding") {
    int violations = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor w = random_tensor({24, 8}, rng);
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k <= 24; ++k) {
        Rng r2(1000 + trial);
        const double sse = pq_fit(w, 4, k, r2).kmeans_sse;
        if (sse > prev + 1e-12) ++violations;
        prev = sse;
      }
    }
    CHECK(violations == 0);
  }
  SUBCASE("deterministic given the seed") {
    const Tensor w = random_tensor({16, 8}, rng);
    Rng a(5), b(5);
    CHECK(pq_compress(w, 2, 4, a) == pq_compress(w, 2, 4, b));
  }
}

TEST_CASE("pq_forward dual path") {
  Rng rng(21);
  SUBCASE("lookup equals reconstruct-then-multiply on random matrices") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t m = 4 + rng.below(29), s = 1 + rng.below(4), n = s * (1 + rng.below(16));
      const std::size_t k = 1 + rng.below(m);
      const Tensor w = random_tensor({m, n}, rng);
      const QuantizedMatrix q = pq_compress(w, s, k, rng);
      const Tensor x = random_tensor({n}, rng);
      worst = std::max(worst, max_abs_diff(pq_forward(q, x.values()), pq_forward_reconstructed(q, x.values())));
    }
    CHECK(worst <= 1e-10);
  }
  SUBCASE("8x8 with s=4, k=8") {
    const Tensor w = random_tensor({8, 8}, rng);
    const QuantizedMatrix q = pq_compress(w, 4, 8, rng);
    const Tensor x = random_tensor({8}, rng);
    CHECK(max_abs_diff(pq_forward(q, x.values()), pq_forward_reconstructed(q, x.values())) <= 1e-10);
  }
  SUBCASE("lossless case matches the uncompressed product") {
    const Tensor w = float_exact_tensor({6, 8}, rng);
    const QuantizedMatrix q = pq_compress(w, 2, 6, rng);
    const Tensor x = random_tensor({8}, rng);
    CHECK(max_abs_diff(pq_forward(q, x.values()), dense_multiply(w, x.values())) <= 1e-10);
  }
  SUBCASE("zero input gives zero output") {
    const QuantizedMatrix q = pq_compress(random_tensor({5, 6}, rng), 3, 2, rng);
    const std::vector<double> zero(6, 0.0);
    for (double v : pq_forward(q, zero)) CHECK(v == 0.0);
  }
  SUBCASE("shape mismatch") {
    const QuantizedMatrix q = pq_compress(random_tensor({5, 6}, rng), 3, 2, rng);
    const std::vector<double> x(5, 1.0);
    CHECK_THROWS_AS(pq_forward(q, x), InputError);
    CHECK_THROWS_AS(pq_forward_reconstructed(q, x), InputError);
  }
}

TEST_CASE("quantized matrix file format") {
  Rng rng(8);
  const QuantizedMatrix q = pq_compress(random_tensor({12, 10}, rng), 5, 3, rng);
  const std::string bytes = encode_quantized(q);
  CHECK(bytes.size() == 20 + 12 * 2 + 4 * 3 * 10);
  CHECK(bytes.size() == q.storage_bytes());
  CHECK(bytes.substr(0, 4) == "HDQ1");
  CHECK(decode_quantized(bytes) == q);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    try {
      decode_quantized(bad);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated center table") {
    try {
      decode_quantized(bytes.substr(0, bytes.size() - 2));
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == bytes.size() - 4);
    }
  }
  SUBCASE("index out of range") {
    std::string bad = bytes;
    bad[20] = 7;
    try {
      decode_quantized(bad);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 20);
    }
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "hdcnn_test_quantized.hdq";
    write_quantized(q, path);
    CHECK(read_quantized(path) == q);
    CHECK(std::filesystem::file_size(path) == q.storage_bytes());
    std::filesystem::remove(path);
  }
}

TEST_CASE("test views") {
  Rng rng(4);
  SUBCASE("constant image gives identical views") {
    const Tensor x({2, 1, 10, 10}, 0.5);
    for (const Tensor& v : ten_views(x, 8)) CHECK(v == center_crop(x, 8));
  }
  SUBCASE("mirror-symmetric image: flipped views equal unflipped views") {
    Tensor x = random_tensor({1, 2, 9, 9}, rng);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 9; ++y)
        for (std::size_t xx = 0; xx < 9; ++xx) x[(c * 9 + y) * 9 + 8 - xx] = x[(c * 9 + y) * 9 + xx];
    const auto views = ten_views(x, 7);
    CHECK(views[1] == views[2]);
    // Corner pairs mirror each other, the center crop is itself symmetric.
    CHECK(views[1] == crop_batch(x, 7, 0, 0, true));
    CHECK(views[3] == views[0]);
    CHECK(views[9] == views[8]);
  }
  SUBCASE("crop equal to the image leaves two distinct views") {
    const Tensor x = random_tensor({3, 1, 6, 6}, rng);
    const auto views = ten_views(x, 6);
    std::set<std::vector<double>> distinct;
    for (const Tensor& v : views) distinct.insert(v.storage());
    CHECK(distinct.size() == 2);
    CHECK(views[0] == x);
  }
  SUBCASE("known crop geometry") {
    Tensor x({1, 1, 3, 3});
    std::iota(x.storage().begin(), x.storage().end(), 0.0);
    const auto v = ten_views(x, 2);
    CHECK(v[0].storage() == std::vector<double>{0, 1, 3, 4});
    CHECK(v[1].storage() == std::vector<double>{1, 0, 4, 3});
    CHECK(v[2].storage() == std::vector<double>{1, 2, 4, 5});
    CHECK(v[4].storage() == std::vector<double>{3, 4, 6, 7});
    CHECK(v[6].storage() == std::vector<double>{4, 5, 7, 8});
    CHECK(v[8].storage() == std::vector<double>{0, 1, 3, 4});
  }
  SUBCASE("crop larger than the image") {
    const Tensor x({1, 1, 4, 4});
    CHECK_THROWS_AS(ten_views(x, 5), InputError);
    CHECK_THROWS_AS(center_crop(x, 5), InputError);
  }
}

TEST_CASE("multiview prediction") {
  Rng rng(6);
  const HdcnnModel m = tiny_model(2, two_by_two_overlapping());
  const Predictor pred = model_predictor(m, ExecPolicy::all());
  SUBCASE("constant image equals the single view") {
    const Tensor x({2, 1, 10, 10}, 0.3);
    const BatchPrediction ten = multiview_predict(pred, x, 8, ViewMode::kTen);
    const BatchPrediction one = multiview_predict(pred, x, 8, ViewMode::kSingle);
    for (std::size_t i = 0; i < ten.probs.size(); ++i) CHECK(ten.probs[i] == doctest::Approx(one.probs[i]));
    CHECK(ten.executed == std::vector<double>{2.0, 2.0});
  }
  SUBCASE("crop equal to the image averages the plain and mirrored prediction") {
    const Tensor x = random_tensor({2, 1, 8, 8}, rng);
    const BatchPrediction ten = multiview_predict(pred, x, 8, ViewMode::kTen);
    const Tensor a = pred(x).probs, b = pred(crop_batch(x, 8, 0, 0, true)).probs;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(ten.probs[i] == doctest::Approx((a[i] + b[i]) / 2));
  }
  SUBCASE("ten-view output stays on the simplex") {
    const Tensor x = random_tensor({3, 1, 10, 10}, rng);
    const BatchPrediction ten = multiview_predict(pred, x, 8, ViewMode::kTen);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto row = ten.probs.row(i);
      CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("label rank") {
  const std::vector<double> p{0.1, 0.4, 0.4, 0.1};
  CHECK(label_rank(p, 1) == 0);
  CHECK(label_rank(p, 2) == 1);
  CHECK(label_rank(p, 0) == 2);
  CHECK(label_rank(p, 3) == 3);
  CHECK_THROWS_AS(label_rank(p, 4), InputError);
}

TEST_CASE("evaluate") {
  Rng rng(12);
  SUBCASE("perfect predictor") {
    const std::size_t n = 120, c = 6;
    Tensor images({n, 1, 2, 2});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(i % c);
      images[i * 4] = static_cast<double>(labels[i]);
    }
    const Predictor oracle = [c](const Tensor& batch) {
      Tensor p({batch.dim(0), c});
      for (std::size_t i = 0; i < batch.dim(0); ++i) p.at(i, static_cast<std::size_t>(batch[i * 4])) = 1.0;
      return BatchPrediction{p, {}};
    };
    const EvalReport r = evaluate(oracle, images, labels, {});
    CHECK(r.top1_err == 0.0);
    REQUIRE(r.top5_err.has_value());
    CHECK(*r.top5_err == 0.0);
    CHECK(r.images == n);
  }
  SUBCASE("top-5 omitted below five classes, uniform output ranks by index") {
    const Tensor images({4, 1, 2, 2});
    const std::vector<int> labels{0, 1, 2, 3};
    const Predictor uniform = [](const Tensor& batch) {
      return BatchPrediction{Tensor({batch.dim(0), 4}, 0.25), {}};
    };
    const EvalReport r = evaluate(uniform, images, labels, {});
    CHECK(r.top1_err == doctest::Approx(75.0));
    CHECK_FALSE(r.top5_err.has_value());
  }
  SUBCASE("full execution runs every component") {
    const HdcnnModel m = tiny_model(2, two_by_two_overlapping());
    const Tensor images = random_tensor({37, 1, 8, 8}, rng);
    std::vector<int> labels(37);
    for (std::size_t i = 0; i < 37; ++i) labels[i] = static_cast<int>(i % 4);
    const EvalReport r = evaluate(model_predictor(m, ExecPolicy::all()), images, labels, {});
    CHECK(r.mean_executed_components == 2.0);
    SUBCASE("worker count does not change the metrics") {
      EvalOptions opts;
      opts.workers = 3;
      opts.batch_size = 5;
      const EvalReport r3 = evaluate(model_predictor(m, ExecPolicy::threshold(1.0)), images, labels, opts);
      const EvalReport r1 = evaluate(model_predictor(m, ExecPolicy::threshold(1.0)), images, labels, {});
      CHECK(r3.top1_err == r1.top1_err);
      CHECK(r3.mean_executed_components == r1.mean_executed_components);
      CHECK(r3.workers == 3);
    }
    SUBCASE("mean executed is non-decreasing in beta") {
      double prev = 0.0;
      for (double beta : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0, kGammaInfinity}) {
        const double e =
            evaluate(model_predictor(m, ExecPolicy::threshold(beta)), images, labels, {}).mean_executed_components;
        CHECK(e >= prev);
        CHECK(e <= 2.0);
        prev = e;
      }
      CHECK(prev == 2.0);
    }
  }
  SUBCASE("empty dataset") {
    const Tensor images({0, 1, 2, 2});
    const Predictor any = [](const Tensor& b) { return BatchPrediction{Tensor({b.dim(0), 2}), {}}; };
    CHECK_THROWS_AS(evaluate(any, images, std::vector<int>{}, {}), InputError);
  }
  SUBCASE("averaging one network equals the network") {
    Rng r2(9);
    const std::vector<Network> nets{Network::initialized(hdcnn::testing::tiny_block_spec(4), r2)};
    const Tensor x = random_tensor({5, 1, 8, 8}, rng);
    CHECK(averaged_predictor(nets)(x).probs == network_predictor(nets[0])(x).probs);
  }
}

TEST_CASE("model compression") {
  const HdcnnModel m = tiny_model(3, two_by_two_overlapping());
  const auto layers = largest_rear_layers(m);
  // Rear layers: conv 3x2x3x3 (index 0) and the classifier (index 3).
  CHECK(layers == std::vector<std::size_t>{0, 3});
  const CompressedModel c = compress_model(m, layers, 2, 2, 77);
  CHECK(c.layers.size() == 2 * (1 + m.fine.size()));
  CHECK(c.layers[0].name() == "coarse.0");
  CHECK(c.layers[3].name() == "fine1.3");
  for (const QuantizedLayer& q : c.layers) CHECK(q.matrix.k <= q.matrix.m);
  CHECK(m.shared == c.model.shared);
  CHECK(reconstruct(c.layers[1].matrix).storage() == c.model.coarse.params()[3].weight.storage());
  CHECK(compressed_parameter_bytes(c) < raw_parameter_bytes(m));
  CHECK(raw_parameter_bytes(m) == m.parameter_count() * 8);
  // Deterministic.
  CHECK(compress_model(m, layers, 2, 2, 77).model == c.model);
  CHECK(with_quantized(m, c.layers) == c.model);
  CHECK_THROWS_AS(compress_model(m, std::vector<std::size_t>{1}, 2, 2, 77), InputError);
}
