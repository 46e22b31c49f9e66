// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "cvarprobe/feature_bank.hpp"
#include "cvarprobe/loss.hpp"
#include "cvarprobe/metrics.hpp"
#include "cvarprobe/mlp.hpp"
#include "cvarprobe/optim.hpp"

namespace cvarprobe {

struct TrainSeeds {
  std::uint64_t init = 0;
  std::uint64_t shuffle = 1;
  std::uint64_t dropout = 2;

  /// Three independent streams from one user-facing seed.
  static TrainSeeds from_master(std::uint64_t seed);
};

struct TrainConfig {
  MlpConfig mlp;
  CvarConfig cvar;
  SamConfig sam;
  AdamConfig adam;
  double lr = 1e-3;
  double min_lr = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 32;
  TrainSeeds seeds;
  /// Fraction of the bank held out for validation when no explicit
  /// validation bank is passed. 0 scores epochs on the training bank.
  double val_fraction = 0.0;
  std::size_t eval_batch_size = 256;
};

void validate_train_config(const TrainConfig& config);

struct StepRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lambda = 0.0;
  double cvar_objective = 0.0;
  double lr = 0.0;
  double grad_l1 = 0.0;
  double loss_min = 0.0;
  double loss_max = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t last_step = 0;
  double val_macro_f1 = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  bool operator==(const TrainLog&) const;
};

/// epoch,step,lambda,cvar_obj,lr,grad_l1,val_macro_f1; the validation
/// column is filled on the last step of each epoch.
void write_log_csv(const TrainLog& log, std::ostream& out);

struct TrainResult {
  MlpParams best;   // params at the best validation epoch (ties: earlier)
  MlpParams last;   // params after the final step
  std::size_t best_epoch = 0;
  double best_val_macro_f1 = 0.0;
  TrainLog log;
};

/// Dropout seed of optimizer step `step`; the clean and perturbed passes of
/// one step share it and therefore their masks.
std::uint64_t step_dropout_seed(std::uint64_t base, std::uint64_t step) noexcept;
/// Shuffle seed of epoch `epoch`.
std::uint64_t epoch_shuffle_seed(std::uint64_t base, std::uint64_t epoch) noexcept;

/// Per-sample task loss (cross-entropy or mean binary cross-entropy) for
/// the bank rows `indices`, given their logits.
SampleLosses task_losses(const FeatureBank& bank, std::span<const std::size_t> indices, const Matrix& logits);

/// Minibatch loop. Per step: TRAIN forward at theta, lambda* by bisection,
/// CVaR-weighted backward, epsilon* = gamma sign(grad), TRAIN forward and
/// backward at theta + epsilon* with lambda* and the active set held fixed,
/// Adam update of theta with the perturbed gradient. With gamma = 0 the
/// second pass is skipped. Running statistics are updated once per step
/// from the pass whose gradient is applied.
TrainResult train(const FeatureBank& bank, const TrainConfig& config,
                  const FeatureBank* validation = nullptr);

/// EVAL forward over the bank in chunks of `batch_size` rows.
EvalReport evaluate(const MlpParams& params, const FeatureBank& bank, std::size_t batch_size = 256);

}  // namespace cvarprobe
