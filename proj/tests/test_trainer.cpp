// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hdcnn/errors.hpp"
#include "hdcnn/loss.hpp"
#include "hdcnn/trainer.hpp"
#include "test_support.hpp"

using namespace hdcnn;
using hdcnn::testing::max_relative_error;
using hdcnn::testing::numeric_gradient;
using hdcnn::testing::random_tensor;
using hdcnn::testing::tiny_block_spec;
using hdcnn::testing::tiny_model;
using hdcnn::testing::two_by_two_overlapping;

namespace {

LabeledImages random_images(std::size_t n, std::size_t classes, Rng& rng) {
  LabeledImages d{random_tensor({n, 1, 8, 8}, rng), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % classes);
  return d;
}

// Two classes told apart by which half of a 4x4 image is bright.
LabeledImages separable_images(std::size_t n, Rng& rng) {
  LabeledImages d{Tensor({n, 1, 4, 4}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<int>(i % 2);
    for (std::size_t p = 0; p < 16; ++p) {
      const bool top = p < 8;
      d.images[i * 16 + p] = rng.uniform(-0.3, 0.3) + ((top == (d.labels[i] == 0)) ? 1.0 : -1.0);
    }
  }
  return d;
}

NetworkSpec linear_spec() {
  NetworkSpec s;
  s.input = {1, 4, 4};
  s.layers = {LayerSpec::flatten(), LayerSpec::fully_connected(16, 2), LayerSpec::softmax()};
  s.split_index = 1;
  return s;
}

TrainConfig small_config(std::size_t epochs, double lr) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.schedule.initial_lr = lr;
  cfg.seed = 17;
  return cfg;
}

double training_error(const Network& net, const LabeledImages& d) {
  const Tensor p = predict(net, d.images);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto row = p.row(i);
    if (static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) != d.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(d.size());
}

// Checks every parameter of `params` against central differences of `loss`.
double group_error(ParamSet& params, const ParamSet& analytic, const std::function<double()>& loss) {
  double worst = 0.0;
  for (std::size_t l = 0; l < params.size(); ++l) {
    for (auto [value, grad] : {std::pair{&params[l].weight, &analytic[l].weight},
                               std::pair{&params[l].bias, &analytic[l].bias}}) {
      if (value->empty()) continue;
      const auto numeric = numeric_gradient(loss, value->values());
      worst = std::max(worst, max_relative_error(grad->values(), numeric));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("consistency targets") {
  SUBCASE("two coarse classes over three fine classes") {
    Hierarchy h = extend_overlapping(std::vector<int>{0, 0, 1}, Tensor::from_rows({{1, 1, 0}, {0, 0, 1}}), 1.0);
    const std::vector<std::size_t> sizes{10, 10, 20};
    const auto t = consistency_targets(h, sizes);
    CHECK(t[0] == doctest::Approx(0.5));
    CHECK(t[1] == doctest::Approx(0.5));
  }
  SUBCASE("every class in every coarse class gives uniform targets") {
    Hierarchy h = extend_overlapping(std::vector<int>{0, 1, 2, 2}, Tensor({3, 4}, 1.0 / 3.0), kGammaInfinity);
    const std::vector<std::size_t> sizes{5, 7, 11, 13};
    for (double v : consistency_targets(h, sizes)) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("singleton coarse classes") {
    const Tensor u = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const Hierarchy h = extend_overlapping(std::vector<int>{0, 1, 2}, u, 1.0);
    const std::vector<std::size_t> sizes{1, 1, 1};
    for (double v : consistency_targets(h, sizes)) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("overlapping classes count once per coarse class") {
    const Hierarchy h = two_by_two_overlapping();  // fine 1 is in both
    const std::vector<std::size_t> sizes{1, 2, 3, 4};
    const auto t = consistency_targets(h, sizes);
    CHECK(t[0] == doctest::Approx(3.0 / 12.0));
    CHECK(t[1] == doctest::Approx(9.0 / 12.0));
  }
  SUBCASE("empty class") {
    const std::vector<std::size_t> sizes{1, 0, 3, 4};
    CHECK_THROWS_AS(consistency_targets(two_by_two_overlapping(), sizes), InputError);
  }
}

TEST_CASE("fine-tuning loss gradients match finite differences") {
  for (double lambda : {20.0, 0.0}) {
    CAPTURE(lambda);
    HdcnnModel m = tiny_model(31, two_by_two_overlapping());
    Rng rng(32);
    const Tensor x = random_tensor({3, 1, 8, 8}, rng);
    const std::vector<int> labels{0, 1, 3};
    const std::vector<double> t{0.3, 0.7};
    const HdcnnLoss r = hdcnn_loss_and_grad(m, x, labels, t, lambda);
    auto loss = [&] { return hdcnn_loss_and_grad(m, x, labels, t, lambda).loss; };
    CHECK(group_error(m.shared.params(), r.grads.shared, loss) <= 1e-4);
    CHECK(group_error(m.coarse.params(), r.grads.coarse, loss) <= 1e-4);
    for (std::size_t k = 0; k < m.fine.size(); ++k) {
      CAPTURE(k);
      CHECK(group_error(m.fine[k].rear.params(), r.grads.fine[k], loss) <= 1e-4);
    }
  }
}

TEST_CASE("fine-tuning loss terms") {
  const HdcnnModel m = tiny_model(5, two_by_two_overlapping());
  Rng rng(6);
  const Tensor x = random_tensor({6, 1, 8, 8}, rng);
  const std::vector<int> labels{0, 1, 2, 3, 1, 0};
  SUBCASE("lambda zero is the log loss of the probabilistic average") {
    const HdcnnLoss r = hdcnn_loss_and_grad(m, x, labels, std::vector<double>{0.5, 0.5}, 0.0);
    const Tensor p = stack_predictions(full_forward(m, x, ExecPolicy::all()));
    CHECK(r.loss == doctest::Approx(multinomial_logistic_loss(p, labels).loss).epsilon(1e-12));
    CHECK(r.consistency_term == 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(r.probs[i] == doctest::Approx(p[i]).epsilon(1e-12));
  }
  SUBCASE("targets equal to the batch mean contribute nothing") {
    const Tensor b = coarse_forward(m, x);
    std::vector<double> t(2, 0.0);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 2; ++k) t[k] += b.at(i, k) / 6.0;
    const HdcnnLoss with = hdcnn_loss_and_grad(m, x, labels, t, 20.0);
    const HdcnnLoss without = hdcnn_loss_and_grad(m, x, labels, t, 0.0);
    CHECK(with.consistency_term == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(with.loss == doctest::Approx(without.loss).epsilon(1e-12));
  }
  SUBCASE("penalty value") {
    const Tensor b = coarse_forward(m, x);
    double mean0 = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean0 += b.at(i, 0) / 6.0;
    const std::vector<double> t{1.0, 0.0};
    const double expected = 10.0 * 2.0 * (1.0 - mean0) * (1.0 - mean0);
    CHECK(hdcnn_loss_and_grad(m, x, labels, t, 20.0).consistency_term == doctest::Approx(expected));
  }
}

TEST_CASE("single coarse class fine-tuning matches block training") {
  Rng rng(40);
  const Network block = Network::initialized(tiny_block_spec(4), rng);
  const Hierarchy h = single_coarse_hierarchy(4);
  Rng arng(41);
  HdcnnModel m = assemble(block, 3, h, arng);
  // Give the single fine component the block's own classifier.
  m.fine[0].rear = block.slice(3, block.spec().layers.size());
  const Tensor x = random_tensor({5, 1, 8, 8}, rng);
  const std::vector<int> labels{0, 1, 2, 3, 2};

  const HdcnnLoss r = hdcnn_loss_and_grad(m, x, labels, std::vector<double>{1.0}, 0.0);
  const Activations acts = forward(block, x);
  const LossResult block_loss = multinomial_logistic_loss(acts.output(), labels);
  const Gradients g = backward(block, acts, block_loss.grad);
  CHECK(r.loss == doctest::Approx(block_loss.loss).epsilon(1e-14));
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(max_relative_error(r.grads.shared[l].weight.values(), g.params[l].weight.values()) <= 1e-12);
  }
  for (std::size_t l = 3; l < g.params.size(); ++l) {
    CHECK(max_relative_error(r.grads.fine[0][l - 3].weight.values(), g.params[l].weight.values()) <= 1e-12);
    CHECK(max_relative_error(r.grads.fine[0][l - 3].bias.values(), g.params[l].bias.values()) <= 1e-12);
  }
  // B is identically one, so the coarse rear receives no gradient.
  for (const auto& p : r.grads.coarse) {
    for (double v : p.weight.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("building block pretraining") {
  Rng rng(50);
  SUBCASE("separable toy problem reaches zero training error") {
    const LabeledImages d = separable_images(40, rng);
    const Network net = pretrain_building_block(linear_spec(), d, small_config(30, 0.05));
    CHECK(training_error(net, d) == 0.0);
  }
  SUBCASE("zero epochs returns the initialized network") {
    const LabeledImages d = separable_images(8, rng);
    const TrainConfig cfg = small_config(0, 0.05);
    Rng init = Rng(cfg.seed).substream(0);
    CHECK(pretrain_building_block(linear_spec(), d, cfg) == Network::initialized(linear_spec(), init));
  }
  SUBCASE("fixed seed reproduces the result and the log") {
    const LabeledImages d = random_images(24, 4, rng);
    TrainConfig cfg = small_config(2, 0.02);
    cfg.crop = 6;
    cfg.flip = true;
    cfg.log_every = 1;
    NetworkSpec spec = tiny_block_spec(4);
    spec.input = {1, 6, 6};
    spec.layers[6] = LayerSpec::fully_connected(27, 4);
    std::vector<TrainLogRecord> a, b;
    const Network na = pretrain_building_block(spec, d, cfg, [&](const TrainLogRecord& r) { a.push_back(r); });
    const Network nb = pretrain_building_block(spec, d, cfg, [&](const TrainLogRecord& r) { b.push_back(r); });
    CHECK(na == nb);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].loss == b[i].loss);
      CHECK(a[i].iteration == static_cast<long>(i));
      CHECK(a[i].stage == "pretrain-block");
      CHECK(a[i].lr == 0.02);
    }
  }
  SUBCASE("divergence reports the iteration") {
    const LabeledImages d = separable_images(8, rng);
    CHECK_THROWS_AS(pretrain_building_block(linear_spec(), d, small_config(5, 1e300)), DivergedError);
  }
  SUBCASE("invalid configuration") {
    const LabeledImages d = separable_images(8, rng);
    TrainConfig cfg = small_config(1, 0.1);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(pretrain_building_block(linear_spec(), d, cfg), InputError);
    cfg = small_config(1, 0.1);
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(pretrain_building_block(linear_spec(), d, cfg), InputError);
  }
}

TEST_CASE("fine component pretraining") {
  Rng rng(60);
  const LabeledImages d = random_images(32, 4, rng);
  const HdcnnModel base = tiny_model(61, two_by_two_overlapping());
  const TrainConfig cfg = small_config(2, 0.05);

  SUBCASE("only component k changes") {
    HdcnnModel m = base;
    pretrain_fine_component(m, 1, d, cfg);
    CHECK(m.shared == base.shared);
    CHECK(m.coarse == base.coarse);
    CHECK(m.fine[0] == base.fine[0]);
    CHECK(m.fine[1].partial_set == base.fine[1].partial_set);
    CHECK_FALSE(m.fine[1].rear == base.fine[1].rear);
  }
  SUBCASE("order of pretraining does not matter") {
    HdcnnModel a = base, b = base, c = base;
    pretrain_fine_component(a, 0, d, cfg);
    pretrain_fine_component(a, 1, d, cfg);
    pretrain_fine_component(b, 1, d, cfg);
    pretrain_fine_component(b, 0, d, cfg);
    CHECK(a == b);
    HdcnnModel s = base;
    pretrain_fine_components(s, d, cfg, 1);
    pretrain_fine_components(c, d, cfg, 2);
    CHECK(s == c);
  }
  SUBCASE("single-class partial set converges to a confident output") {
    const Tensor u = Tensor::from_rows({{0.9, 0.1, 0.1, 0.1}, {0.1, 0.9, 0.9, 0.9}});
    HdcnnModel m = tiny_model(62, extend_overlapping(std::vector<int>{0, 1, 1, 1}, u, 1.0));
    REQUIRE(m.fine[0].partial_set == std::vector<int>{0});
    std::vector<TrainLogRecord> log;
    TrainConfig c1 = small_config(3, 0.05);
    c1.log_every = 1;
    pretrain_fine_component(m, 0, d, c1, [&](const TrainLogRecord& r) { log.push_back(r); });
    REQUIRE_FALSE(log.empty());
    CHECK(log.back().loss < 1e-12);
    CHECK(log.back().stage == "pretrain-fine-0");
    const Tensor p = fine_forward(m, 0, predict(m.shared, d.images));
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(p.at(i, 0) == doctest::Approx(1.0));
  }
  SUBCASE("partial set without images") {
    LabeledImages only01 = d;
    for (int& y : only01.labels) y %= 2;
    const Tensor u = Tensor::from_rows({{0.9, 0.9, 0.1, 0.1}, {0.1, 0.1, 0.9, 0.9}});
    HdcnnModel m = tiny_model(63, extend_overlapping(std::vector<int>{0, 0, 1, 1}, u, 1.0));
    CHECK_THROWS_AS(pretrain_fine_component(m, 1, only01, cfg), InputError);
    CHECK_THROWS_AS(pretrain_fine_components(m, only01, cfg, 2), InputError);
    CHECK_THROWS_AS(pretrain_fine_component(m, 2, d, cfg), InputError);
  }
}

TEST_CASE("fine-tuning") {
  Rng rng(70);
  const LabeledImages d = random_images(24, 4, rng);
  HdcnnModel base = tiny_model(71, two_by_two_overlapping());
  pretrain_fine_components(base, d, small_config(2, 0.05), 1);
  const std::vector<double> t = consistency_targets(base.hierarchy, std::vector<std::size_t>{6, 6, 6, 6});

  SUBCASE("zero learning rate leaves the model unchanged") {
    HdcnnModel m = base;
    finetune(m, d, t, small_config(2, 0.0));
    CHECK(m == base);
  }
  SUBCASE("training loss decreases") {
    HdcnnModel m = base;
    const double before = hdcnn_loss_and_grad(m, d.images, d.labels, t, 20.0).loss;
    std::vector<TrainLogRecord> log;
    TrainConfig cfg = small_config(20, 0.02);
    cfg.log_every = 6;
    finetune(m, d, t, cfg, [&](const TrainLogRecord& r) { log.push_back(r); });
    const double after = hdcnn_loss_and_grad(m, d.images, d.labels, t, 20.0).loss;
    CHECK(after < before);
    CHECK_FALSE(m.shared == base.shared);
    REQUIRE(log.size() == 21);
    CHECK(log.front().stage == "finetune");
    CHECK(log.back().iteration == 119);
    for (const auto& r : log) {
      CHECK(r.consistency_term >= 0.0);
      CHECK(r.consistency_term <= r.loss);
      CHECK(r.top1_train_err >= 0.0);
      CHECK(r.top1_train_err <= 100.0);
    }
  }
  SUBCASE("default consistency weight") { CHECK(TrainConfig{}.lambda == 20.0); }
}
