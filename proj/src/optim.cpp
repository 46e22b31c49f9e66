// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cvarprobe/error.hpp"

namespace cvarprobe {
namespace {

void check_congruent(const Trainable& a, const Trainable& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].size() != tb[i].size()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor " + std::to_string(i) + " has " + std::to_string(ta[i].size()) +
                                                 " entries vs " + std::to_string(tb[i].size()));
    }
  }
}

}  // namespace

Trainable sam_perturbation(const Gradients& grads, const SamConfig& config) {
  if (!(config.gamma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be >= 0");
  Trainable eps = grads;
  for (auto t : eps.tensors()) {
    for (double& v : t) v = v > 0.0 ? config.gamma : (v < 0.0 ? -config.gamma : 0.0);
  }
  return eps;
}

MlpParams perturbed(const MlpParams& params, const Trainable& delta) {
  check_congruent(params.trainable, delta);
  MlpParams out = params;
  auto dst = out.trainable.tensors();
  const auto src = delta.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
  }
  return out;
}

double l1_norm(const Trainable& t) {
  double total = 0.0;
  for (const auto tensor : t.tensors()) {
    for (const double v : tensor) total += std::abs(v);
  }
  return total;
}

double dot(const Trainable& a, const Trainable& b) {
  check_congruent(a, b);
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  double total = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i].size(); ++j) total += ta[i][j] * tb[i][j];
  }
  return total;
}

AdamState make_adam_state(const MlpParams& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  state.first_moment = params.trainable.zeros_like();
  state.second_moment = params.trainable.zeros_like();
  return state;
}

void adam_step(MlpParams& params, const Gradients& grads, AdamState& state, double lr) {
  check_congruent(params.trainable, grads);
  check_congruent(params.trainable, state.first_moment);
  const auto& c = state.config;
  ++state.step;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  auto theta = params.trainable.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  const auto g = grads.tensors();
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (std::size_t j = 0; j < theta[t].size(); ++j) {
      m[t][j] = c.beta1 * m[t][j] + (1.0 - c.beta1) * g[t][j];
      v[t][j] = c.beta2 * v[t][j] + (1.0 - c.beta2) * g[t][j] * g[t][j];
      const double m_hat = m[t][j] / bias1;
      const double v_hat = v[t][j] / bias2;
      theta[t][j] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double cosine_lr(const LrSchedule& schedule, std::uint64_t t) {
  if (schedule.total_steps < 1) throw Error(ErrorCode::kInvalidArgument, "schedule needs T >= 1");
  if (!(schedule.minimum >= 0.0 && schedule.minimum <= schedule.base)) {
    throw Error(ErrorCode::kInvalidArgument, "schedule needs 0 <= min rate <= base rate");
  }
  if (t > schedule.total_steps) {
    throw Error(ErrorCode::kStepOutOfRange,
                "step " + std::to_string(t) + " outside [0, " + std::to_string(schedule.total_steps) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return schedule.minimum + 0.5 * (schedule.base - schedule.minimum) * (1.0 + std::cos(phase));
}

}  // namespace cvarprobe
