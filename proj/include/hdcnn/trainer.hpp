// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hdcnn/model.hpp"
#include "hdcnn/network.hpp"
#include "hdcnn/optimizer.hpp"
#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

/// Images [N, C, H, W] with 0-based labels.
struct LabeledImages {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

LabeledImages subset(const LabeledImages& data, std::span<const std::size_t> rows);

inline constexpr double kDefaultConsistencyWeight = 20.0;

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 1;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda = kDefaultConsistencyWeight;
  std::size_t crop = 0;  // 0: no cropping
  bool flip = false;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;

  void validate() const;
};

struct TrainLogRecord {
  std::string stage;
  long iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
  double consistency_term = 0.0;
  double top1_train_err = 0.0;  // percent, on the minibatch
};
using TrainLogger = std::function<void(const TrainLogRecord&)>;

/// Number of SGD iterations for `n` images: epochs * ceil(n / batch_size).
long iteration_count(const TrainConfig& cfg, std::size_t n);

/// Gathers `rows` and applies the configured augmentation: a random crop
/// offset and a fair coin for mirroring, drawn per image.
Tensor augment_batch(const Tensor& images, std::span<const std::size_t> rows, const TrainConfig& cfg, Rng& rng);

/// Trains a freshly initialized network on `data`.
Network pretrain_building_block(const NetworkSpec& spec, const LabeledImages& data, const TrainConfig& cfg,
                                const TrainLogger& log = {});

/// Trains the rear of fine component k on the images whose label is in its
/// partial set. Shared and coarse parameters are read only.
void pretrain_fine_component(HdcnnModel& model, std::size_t k, const LabeledImages& data, const TrainConfig& cfg,
                             const TrainLogger& log = {});

/// Pretrains every fine component, spread over `workers` threads. Component
/// k draws its randomness from cfg.seed mixed with k. Log records are
/// emitted after all threads finish, in component order.
void pretrain_fine_components(HdcnnModel& model, const LabeledImages& data, const TrainConfig& cfg,
                              std::size_t workers, const TrainLogger& log = {});

/// t_k proportional to the number of training images whose fine class is
/// mapped to coarse class k, normalized to sum to 1.
std::vector<double> consistency_targets(const Hierarchy& hierarchy, std::span<const std::size_t> class_sizes);

struct ModelGradients {
  ParamSet shared;
  ParamSet coarse;
  std::vector<ParamSet> fine;
};

struct HdcnnLoss {
  double loss = 0.0;              // total objective
  double consistency_term = 0.0;  // (lambda / 2) * sum_k (t_k - mean_i B_ik)^2
  Tensor probs;                   // final predictions [n, C]
  ModelGradients grads;
};

/// Mean negative log-likelihood of the probabilistic average over all
/// components plus the coarse consistency penalty, with gradients for every
/// parameter group. Throws DivergedError (iteration -1) on a non-finite
/// loss.
HdcnnLoss hdcnn_loss_and_grad(const HdcnnModel& model, const Tensor& batch, std::span<const int> labels,
                              std::span<const double> targets, double lambda);

/// Fine-tunes every parameter of the model with cfg.lambda.
void finetune(HdcnnModel& model, const LabeledImages& data, std::span<const double> targets,
              const TrainConfig& cfg, const TrainLogger& log = {});

}  // namespace hdcnn
