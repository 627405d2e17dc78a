// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/optimizer.hpp"

#include <cmath>

#include "hdcnn/errors.hpp"

namespace hdcnn {

double LrSchedule::rate_at(long iteration) const {
  if (drop_every <= 0) return initial_lr;
  return initial_lr / std::pow(drop_factor, static_cast<double>(iteration / drop_every));
}

OptimizerState OptimizerState::for_params(const ParamSet& params, LrSchedule schedule, double momentum,
                                          double weight_decay) {
  if (!(schedule.initial_lr >= 0.0)) throw InputError("learning rate must be non-negative");
  OptimizerState s;
  s.schedule = schedule;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.velocity = zeros_like(params);
  return s;
}

void sgd_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw InputError("sgd_step: parameter, gradient and velocity sets differ in size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].weight.shape() != grads[i].weight.shape() || params[i].bias.shape() != grads[i].bias.shape() ||
        params[i].weight.shape() != state.velocity[i].weight.shape())
      throw InputError("sgd_step: shape mismatch at layer " + std::to_string(i));
  }
  if (!all_finite(grads)) throw DivergedError("non-finite gradient", state.iteration);

  const double lr = state.current_lr();
  const double mu = state.momentum;
  const double wd = state.weight_decay;
  auto update = [&](Tensor& w, const Tensor& g, Tensor& v) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mu * v[j] - lr * (g[j] + wd * w[j]);
      w[j] += v[j];
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(params[i].weight, grads[i].weight, state.velocity[i].weight);
    update(params[i].bias, grads[i].bias, state.velocity[i].bias);
  }
  ++state.iteration;
}

}  // namespace hdcnn
