// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "cvarprobe/mlp.hpp"

namespace cvarprobe {

/// gamma = 0 disables the perturbation.
struct SamConfig {
  double gamma = 0.05;
};

/// epsilon*[j] = gamma * sign(grad[j]), sign(0) = 0.
Trainable sam_perturbation(const Gradients& grads, const SamConfig& config);

/// Copy of `params` with `delta` added to every trainable entry. Running
/// statistics are carried over unchanged.
MlpParams perturbed(const MlpParams& params, const Trainable& delta);

/// Sum of absolute values over all trainable tensors.
double l1_norm(const Trainable& t);
double dot(const Trainable& a, const Trainable& b);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Trainable first_moment;
  Trainable second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const MlpParams& params, const AdamConfig& config = {});

/// One bias-corrected Adam update of the trainable tensors; running
/// batch-norm statistics are left alone.
void adam_step(MlpParams& params, const Gradients& grads, AdamState& state, double lr);

struct LrSchedule {
  double base = 1e-3;
  double minimum = 0.0;
  std::uint64_t total_steps = 1;
};

/// min + (base - min) * (1 + cos(pi t / T)) / 2 for 0 <= t <= T.
double cosine_lr(const LrSchedule& schedule, std::uint64_t t);

}  // namespace cvarprobe
