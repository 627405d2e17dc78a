// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "hdcnn/network.hpp"

namespace hdcnn {

/// Step schedule: lr = initial_lr / drop_factor^floor(iteration / drop_every).
/// drop_every == 0 keeps the rate constant.
struct LrSchedule {
  double initial_lr = 0.01;
  double drop_factor = 10.0;
  long drop_every = 0;

  double rate_at(long iteration) const;
};

/// Momentum SGD state for one parameter set.
struct OptimizerState {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  long iteration = 0;
  ParamSet velocity;

  static OptimizerState for_params(const ParamSet& params, LrSchedule schedule, double momentum,
                                   double weight_decay);
  double current_lr() const { return schedule.rate_at(iteration); }
};

/// v <- mu*v - lr*(g + wd*w); w <- w + v; iteration += 1.
/// Throws DivergedError on a non-finite gradient before touching anything.
void sgd_step(ParamSet& params, const ParamSet& grads, OptimizerState& state);

}  // namespace hdcnn
