// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "hdcnn/errors.hpp"
#include "hdcnn/hierarchy.hpp"
#include "test_support.hpp"

using namespace hdcnn;
using hdcnn::testing::random_tensor;

namespace {

// Normalized cut of a bipartition under affinity 1 - D (independent oracle).
double normalized_cut(const Tensor& d, const std::vector<int>& side) {
  const std::size_t c = d.dim(0);
  double cut = 0.0, vol[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      const double a = 1.0 - d.at(i, j);
      vol[side[i]] += a;
      if (side[i] != side[j]) cut += a;
    }
  cut /= 2.0;
  return cut / vol[0] + cut / vol[1];
}

std::set<std::set<int>> partition_of(const std::vector<int>& labels) {
  std::map<int, std::set<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(static_cast<int>(i));
  std::set<std::set<int>> out;
  for (auto& [k, g] : groups) out.insert(g);
  return out;
}

Tensor block_distance(std::size_t blocks, std::size_t per_block, double within, double across) {
  const std::size_t c = blocks * per_block;
  Tensor d({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      d.at(i, j) = i == j ? 0.0 : (i / per_block == j / per_block ? within : across);
  return d;
}

Tensor random_simplex_rows(std::size_t n, std::size_t c, Rng& rng) {
  Tensor p({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (p.at(i, j) = -std::log(1.0 - rng.uniform()));
    for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= s;
  }
  return p;
}

}  // namespace

TEST_CASE("held-out sampling") {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 100; ++i) labels.push_back(c);
  Rng rng(4);
  SUBCASE("balanced counts and disjoint parts") {
    const auto s = sample_held_out(labels, 10, 10, rng);
    CHECK(s.heldout.size() == 100);
    CHECK(s.remainder.size() == 900);
    std::vector<int> per(10, 0);
    for (auto i : s.heldout) ++per[static_cast<std::size_t>(labels[i])];
    for (int v : per) CHECK(v == 10);
    std::vector<std::size_t> all = s.heldout;
    all.insert(all.end(), s.remainder.begin(), s.remainder.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    CHECK(all.size() == labels.size());
  }
  SUBCASE("zero per class") {
    const auto s = sample_held_out(labels, 10, 0, rng);
    CHECK(s.heldout.empty());
    CHECK(s.remainder.size() == 1000);
  }
  SUBCASE("same seed twice") {
    Rng a(77), b(77);
    const auto sa = sample_held_out(labels, 10, 7, a);
    const auto sb = sample_held_out(labels, 10, 7, b);
    CHECK(sa.heldout == sb.heldout);
    CHECK(sa.remainder == sb.remainder);
  }
  SUBCASE("class too small names the class") {
    labels.push_back(10);
    try {
      sample_held_out(labels, 11, 2, rng);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("class 11") != std::string::npos);
    }
  }
}

TEST_CASE("confusion matrix from predictions") {
  SUBCASE("perfect classifier") {
    const Tensor p = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.1, 0.8, 0.1}});
    const Tensor f = confusion_from_predictions(p, std::vector<int>{0, 1, 2, 1}, 3);
    CHECK(f == Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  }
  SUBCASE("constant prediction fills one column") {
    const Tensor p = Tensor::from_rows({{1, 0}, {1, 0}, {1, 0}});
    const Tensor f = confusion_from_predictions(p, std::vector<int>{0, 1, 1}, 2);
    CHECK(f == Tensor::from_rows({{1, 0}, {1, 0}}));
  }
  SUBCASE("half of class 1 predicted as class 2") {
    const Tensor p = Tensor::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}, {0.6, 0.4}, {0.1, 0.9}});
    const std::vector<int> y{0, 0, 1, 0, 0};
    // Counting oracle.
    double hit[2][2] = {};
    double n[2] = {};
    for (std::size_t i = 0; i < y.size(); ++i) {
      hit[y[i]][p.at(i, 1) > p.at(i, 0) ? 1 : 0] += 1;
      n[y[i]] += 1;
    }
    const Tensor f = confusion_from_predictions(p, y, 2);
    CHECK(f.at(0, 0) == hit[0][0] / n[0]);
    CHECK(f.at(0, 1) == 0.5);
    CHECK(f.at(1, 1) == 1.0);
  }
  SUBCASE("argmax ties go to the lower index") {
    const Tensor f = confusion_from_predictions(Tensor::from_rows({{0.5, 0.5}, {0.5, 0.5}}), std::vector<int>{0, 1}, 2);
    CHECK(f.at(1, 0) == 1.0);
  }
}

TEST_CASE("distance transform") {
  SUBCASE("identity confusion") {
    const Tensor d = distance_from_confusion(Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
    CHECK(d == Tensor::from_rows({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}));
  }
  SUBCASE("asymmetric confusion") {
    const Tensor d = distance_from_confusion(Tensor::from_rows({{0.6, 0.4}, {0.2, 0.8}}));
    CHECK(d.at(0, 1) == doctest::Approx(0.5 * ((1 - 0.4) + (1 - 0.2))));
    CHECK(d.at(0, 1) == doctest::Approx(0.7));
    CHECK(d.at(1, 0) == d.at(0, 1));
  }
  SUBCASE("exact symmetry and zero diagonal for random row-stochastic input") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      const std::size_t c = 2 + rng.below(12);
      const Tensor d = distance_from_confusion(random_simplex_rows(c, c, rng));
      for (std::size_t i = 0; i < c; ++i) {
        CHECK(d.at(i, i) == 0.0);
        for (std::size_t j = 0; j < c; ++j) {
          CHECK(d.at(i, j) == d.at(j, i));
          CHECK(d.at(i, j) >= 0.0);
          CHECK(d.at(i, j) <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("spectral clustering recovers the minimum normalized cut on a 2x2 block matrix") {
  const Tensor d = block_distance(2, 2, 0.5, 1.0);
  // Brute force over all 2-partitions: the planted blocks have the lowest cut.
  double best = 1e300;
  std::vector<int> best_side;
  for (int mask = 1; mask < 8; ++mask) {
    std::vector<int> side{0, mask & 1, (mask >> 1) & 1, (mask >> 2) & 1};
    const double v = normalized_cut(d, side);
    if (v < best) {
      best = v;
      best_side = side;
    }
  }
  CHECK(partition_of(best_side) == std::set<std::set<int>>{{0, 1}, {2, 3}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    CHECK(partition_of(spectral_cluster(d, 2, rng)) == partition_of(best_side));
  }
}

TEST_CASE("spectral clustering with K = C gives singletons") {
  Rng rng(1);
  const Tensor d = block_distance(3, 2, 0.4, 0.9);
  const auto p = spectral_cluster(d, 6, rng);
  CHECK(std::set<int>(p.begin(), p.end()).size() == 6);
}

TEST_CASE("spectral clustering on uniform distances") {
  const Tensor d = block_distance(1, 4, 0.5, 0.5);
  // Every bipartition of a uniform affinity has the same normalized cut, so
  // the oracle constrains only nonemptiness.
  const double balanced = normalized_cut(d, {0, 0, 1, 1});
  const double lopsided = normalized_cut(d, {0, 1, 1, 1});
  CHECK(balanced == doctest::Approx(lopsided));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto p = spectral_cluster(d, 2, rng);
    CHECK(std::set<int>(p.begin(), p.end()).size() == 2);
  }
}

TEST_CASE("spectral clustering recovers planted blocks for ten seeds") {
  Rng noise(123);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor f({16, 16});
    for (std::size_t i = 0; i < 16; ++i) {
      double off = 0.0;
      for (std::size_t j = 0; j < 16; ++j) {
        if (i == j) continue;
        f.at(i, j) = i / 4 == j / 4 ? 0.1 : noise.uniform(0.0, 0.05 / 12);
        off += f.at(i, j);
      }
      f.at(i, i) = 1.0 - off;
    }
    Rng rng(seed);
    const auto p = spectral_cluster(distance_from_confusion(f), 4, rng);
    std::vector<int> planted(16);
    for (std::size_t i = 0; i < 16; ++i) planted[i] = static_cast<int>(i / 4);
    CHECK(partition_of(p) == partition_of(planted));
  }
}

TEST_CASE("spectral cluster ids are canonical") {
  Rng rng(3);
  const auto p = spectral_cluster(block_distance(3, 3, 0.3, 1.0), 3, rng);
  CHECK(p == std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2});
}

TEST_CASE("spectral clustering rejects a bad K") {
  Rng rng(0);
  CHECK_THROWS_AS(spectral_cluster(block_distance(2, 2, 0.5, 1.0), 5, rng), InputError);
}

TEST_CASE("fine-to-coarse aggregation") {
  SUBCASE("one-hot fine with disjoint map") {
    const Tensor b = aggregate_coarse(Tensor::from_rows({{0, 0, 1, 0}}), disjoint_as_mapping(std::vector<int>{0, 0, 1, 1}), 2);
    CHECK(b == Tensor::from_rows({{0, 1}}));
  }
  SUBCASE("one-hot fine in two coarse categories") {
    const CoarseMapping m{{0, 1}, {1}, {2}};
    const Tensor b = aggregate_coarse(Tensor::from_rows({{1, 0, 0}}), m, 3);
    CHECK(b == Tensor::from_rows({{0.5, 0.5, 0}}));
  }
  SUBCASE("uniform fine over equal groups") {
    const Tensor b = aggregate_coarse(Tensor({1, 4}, 0.25), disjoint_as_mapping(std::vector<int>{0, 0, 1, 1}), 2);
    CHECK(b == Tensor::from_rows({{0.5, 0.5}}));
  }
  SUBCASE("rows off the simplex are rejected") {
    CHECK_THROWS_AS(aggregate_coarse(Tensor::from_rows({{0.5, 0.6}}), disjoint_as_mapping(std::vector<int>{0, 1}), 2),
                    InputError);
  }
}

TEST_CASE("misclassification likelihood") {
  SUBCASE("mean of two images") {
    const Tensor b = Tensor::from_rows({{0.8, 0.2}, {0.6, 0.4}});
    const Tensor u = misclassification_likelihood(b, std::vector<int>{0, 0}, 1);
    CHECK(u.at(1, 0) == doctest::Approx(0.3));
  }
  SUBCASE("perfect coarse classifier") {
    const Tensor b = Tensor::from_rows({{1, 0}, {0, 1}, {1, 0}});
    const Tensor u = misclassification_likelihood(b, std::vector<int>{0, 1, 2}, 3);
    CHECK(u == Tensor::from_rows({{1, 0, 1}, {0, 1, 0}}));
  }
  SUBCASE("uniform coarse predictions") {
    const Tensor u = misclassification_likelihood(Tensor({4, 4}, 0.25), std::vector<int>{0, 1, 2, 1}, 3);
    for (double v : u.values()) CHECK(v == 0.25);
  }
  SUBCASE("absent class") {
    CHECK_THROWS_AS(misclassification_likelihood(Tensor({1, 2}, 0.5), std::vector<int>{0}, 2), InputError);
  }
  SUBCASE("columns sum to one") {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
      const std::size_t c = 2 + rng.below(8), k = 1 + rng.below(c);
      std::vector<int> y;
      for (std::size_t j = 0; j < c; ++j) y.push_back(static_cast<int>(j));
      for (int i = 0; i < 20; ++i) y.push_back(static_cast<int>(rng.below(c)));
      const Tensor u = misclassification_likelihood(random_simplex_rows(y.size(), k, rng), y, c);
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) s += u.at(kk, j);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("overlapping extension") {
  const std::vector<int> disjoint{0, 0, 1, 1};
  const Tensor u = Tensor::from_rows({{0.7, 0.9, 0.3, 0.05}, {0.3, 0.1, 0.7, 0.95}});
  SUBCASE("infinite gamma puts every class everywhere") {
    const Hierarchy h = extend_overlapping(disjoint, u, kGammaInfinity);
    CHECK(h.threshold() == 0.0);
    for (const auto& s : h.partial_sets) CHECK(s == std::vector<int>{0, 1, 2, 3});
  }
  SUBCASE("threshold above every off-block likelihood keeps the disjoint map") {
    const Hierarchy h = extend_overlapping(disjoint, u, 1.0);  // u_t = 0.5
    CHECK(h.overlapping == disjoint_as_mapping(disjoint));
  }
  SUBCASE("intermediate gamma") {
    const Hierarchy h = extend_overlapping(disjoint, u, 2.0);  // u_t = 0.25
    CHECK(h.overlapping == CoarseMapping{{0, 1}, {0}, {0, 1}, {1}});
    CHECK(h.partial_sets == std::vector<std::vector<int>>{{0, 1, 2}, {0, 2, 3}});
  }
  SUBCASE("default threshold") {
    Hierarchy h;
    h.num_coarse = 9;
    h.gamma = 5.0;
    CHECK(h.threshold() == doctest::Approx(1.0 / 45.0));
  }
  SUBCASE("partial sets grow with gamma") {
    Rng rng(10);
    for (int t = 0; t < 50; ++t) {
      const std::size_t c = 3 + rng.below(10), k = 2 + rng.below(c - 2);
      std::vector<int> dj(c);
      for (std::size_t j = 0; j < c; ++j) dj[j] = static_cast<int>(j < k ? j : rng.below(k));
      Tensor lk = transpose(random_simplex_rows(c, k, rng));
      std::size_t prev = 0;
      for (double g : {0.5, 1.0, 2.0, 5.0, 10.0, kGammaInfinity}) {
        const Hierarchy h = extend_overlapping(dj, lk, g);
        std::size_t total = 0;
        for (const auto& s : h.partial_sets) total += s.size();
        CHECK(total >= prev);
        prev = total;
        for (std::size_t j = 0; j < c; ++j)
          CHECK(std::binary_search(h.overlapping[j].begin(), h.overlapping[j].end(), dj[j]));
      }
    }
  }
  SUBCASE("gamma must be positive") { CHECK_THROWS_AS(extend_overlapping(disjoint, u, 0.0), InputError); }
}

TEST_CASE("hierarchy text round-trip") {
  const Tensor u = Tensor::from_rows({{0.7, 0.9, 0.3, 0.05}, {0.3, 0.1, 0.7, 0.95}});
  const Hierarchy h = extend_overlapping(std::vector<int>{0, 0, 1, 1}, u, 2.0);
  const std::string text = format_hierarchy(h);
  CHECK(text.rfind("K=2 gamma=2\nfine 1 disjoint 1 overlapping 1,2\n", 0) == 0);
  CHECK(parse_hierarchy(text, format_likelihood_csv(u)) == h);
  const Hierarchy inf = single_coarse_hierarchy(3);
  CHECK(format_hierarchy(inf).rfind("K=1 gamma=inf\n", 0) == 0);
  CHECK(parse_hierarchy(format_hierarchy(inf), format_likelihood_csv(inf.likelihood)) == inf);
  CHECK_THROWS_AS(parse_hierarchy("K=2 gamma=1\nfine 1 disjoint 1 overlapping 2\n"), InputError);
}
