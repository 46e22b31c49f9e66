// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <string>

#include "cvarprobe/error.hpp"
#include "cvarprobe/rng.hpp"

namespace cvarprobe {
namespace {

constexpr std::uint64_t kValidationSplitStream = 0x76616C;

void check_compatible(const MlpConfig& mlp, const FeatureBank& bank) {
  if (mlp.task != bank.task()) {
    throw Error(ErrorCode::kTaskMismatch, std::string("model head is ") +
                                              (mlp.task.is_multiclass() ? "multiclass" : "multilabel") + " with " +
                                              std::to_string(mlp.task.width) + " outputs, bank is " +
                                              (bank.task().is_multiclass() ? "multiclass" : "multilabel") +
                                              " with width " + std::to_string(bank.task().width));
  }
  if (mlp.input_dim != bank.dim()) {
    throw Error(ErrorCode::kShapeMismatch, "model expects d=" + std::to_string(mlp.input_dim) + ", bank has d=" +
                                               std::to_string(bank.dim()));
  }
}

}  // namespace

TrainSeeds TrainSeeds::from_master(std::uint64_t seed) {
  return {derive_seed(seed, 0), derive_seed(seed, 1), derive_seed(seed, 2)};
}

std::uint64_t step_dropout_seed(std::uint64_t base, std::uint64_t step) noexcept { return derive_seed(base, step); }

std::uint64_t epoch_shuffle_seed(std::uint64_t base, std::uint64_t epoch) noexcept {
  return derive_seed(base, epoch);
}

void validate_train_config(const TrainConfig& config) {
  validate_mlp_config(config.mlp);
  validate_cvar_config(config.cvar);
  if (!(config.sam.gamma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be >= 0");
  if (!(config.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  if (!(config.min_lr >= 0.0 && config.min_lr <= config.lr)) {
    throw Error(ErrorCode::kInvalidArgument, "minimum learning rate must lie in [0, lr]");
  }
  if (config.batch_size < 2) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 2 for batch-norm");
  if (config.epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "validation fraction must lie in [0,1)");
  }
  if (config.eval_batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "evaluation batch size must be >= 1");
}

bool TrainLog::operator==(const TrainLog& other) const {
  const auto same_step = [](const StepRecord& a, const StepRecord& b) {
    return a.epoch == b.epoch && a.step == b.step && a.lambda == b.lambda && a.cvar_objective == b.cvar_objective &&
           a.lr == b.lr && a.grad_l1 == b.grad_l1 && a.loss_min == b.loss_min && a.loss_max == b.loss_max;
  };
  const auto same_epoch = [](const EpochRecord& a, const EpochRecord& b) {
    return a.epoch == b.epoch && a.last_step == b.last_step && a.val_macro_f1 == b.val_macro_f1;
  };
  return std::equal(steps.begin(), steps.end(), other.steps.begin(), other.steps.end(), same_step) &&
         std::equal(epochs.begin(), epochs.end(), other.epochs.begin(), other.epochs.end(), same_epoch);
}

void write_log_csv(const TrainLog& log, std::ostream& out) {
  out << "epoch,step,lambda,cvar_obj,lr,grad_l1,val_macro_f1\n";
  out << std::setprecision(17);
  std::size_t next_epoch = 0;
  for (const auto& s : log.steps) {
    out << s.epoch << ',' << s.step << ',' << s.lambda << ',' << s.cvar_objective << ',' << s.lr << ',' << s.grad_l1
        << ',';
    if (next_epoch < log.epochs.size() && log.epochs[next_epoch].last_step == s.step) {
      out << log.epochs[next_epoch].val_macro_f1;
      ++next_epoch;
    }
    out << '\n';
  }
}

SampleLosses task_losses(const FeatureBank& bank, std::span<const std::size_t> indices, const Matrix& logits) {
  if (bank.task().is_multiclass()) {
    std::vector<std::uint16_t> labels;
    labels.reserve(indices.size());
    for (const std::size_t i : indices) labels.push_back(bank.class_labels()[i]);
    return cross_entropy(logits, labels);
  }
  std::vector<std::uint8_t> labels;
  labels.reserve(indices.size() * bank.task().width);
  for (const std::size_t i : indices) {
    const auto row = bank.unit_row(i);
    labels.insert(labels.end(), row.begin(), row.end());
  }
  return binary_cross_entropy(logits, labels);
}

TrainResult train(const FeatureBank& bank, const TrainConfig& config, const FeatureBank* validation) {
  validate_train_config(config);
  check_compatible(config.mlp, bank);

  // Resolve the training and validation banks.
  std::optional<std::pair<FeatureBank, FeatureBank>> split;
  const FeatureBank* train_bank = &bank;
  const FeatureBank* val_bank = validation;
  if (val_bank == nullptr && config.val_fraction > 0.0) {
    split = split_bank(bank, config.val_fraction, derive_seed(config.seeds.shuffle, kValidationSplitStream));
    train_bank = &split->first;
    val_bank = &split->second;
  }
  if (val_bank == nullptr) val_bank = train_bank;
  check_compatible(config.mlp, *val_bank);

  const std::size_t per_epoch = train_bank->size() / config.batch_size;
  if (per_epoch == 0) {
    throw Error(ErrorCode::kEmptyPlan, "training bank of " + std::to_string(train_bank->size()) +
                                           " rows is smaller than one batch of " +
                                           std::to_string(config.batch_size));
  }
  const LrSchedule schedule{config.lr, config.min_lr, per_epoch * config.epochs};

  TrainResult result;
  MlpParams params = init_params(config.mlp, config.seeds.init);
  AdamState adam = make_adam_state(params, config.adam);
  result.best = params;
  bool have_best = false;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = plan_batches(
        train_bank->size(),
        BatchPlan{config.batch_size, epoch_shuffle_seed(config.seeds.shuffle, epoch), /*drop_last=*/true});
    for (const auto& indices : batches) {
      const double lr = cosine_lr(schedule, step);
      const std::uint64_t mask_seed = step_dropout_seed(config.seeds.dropout, step);
      const Matrix x = train_bank->gather_features(indices);

      // (1) theta fixed: losses and lambda*.
      const ForwardResult clean = forward(params, x, Mode::kTrain, mask_seed);
      const SampleLosses losses = task_losses(*train_bank, indices, clean.logits);
      const CvarSolution sol = cvar_lambda_search(losses.values, config.cvar);

      // (2) lambda fixed: CVaR gradient at theta and epsilon*.
      const Gradients grad = backward(params, clean.cache, cvar_weights_to_logit_grad(sol, losses.dlogits));

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lambda = sol.lambda;
      rec.cvar_objective = sol.objective;
      rec.lr = lr;
      rec.grad_l1 = l1_norm(grad);
      const auto [lo, hi] = std::minmax_element(losses.values.begin(), losses.values.end());
      rec.loss_min = *lo;
      rec.loss_max = *hi;

      // (3) gradient at theta + epsilon*, applied at theta.
      if (config.sam.gamma > 0.0) {
        const MlpParams shifted = perturbed(params, sam_perturbation(grad, config.sam));
        const ForwardResult pert = forward(shifted, x, Mode::kTrain, mask_seed);
        const SampleLosses pert_losses = task_losses(*train_bank, indices, pert.logits);
        const Gradients pert_grad =
            backward(shifted, pert.cache, cvar_weights_to_logit_grad(sol, pert_losses.dlogits));
        update_running_stats(params, pert.cache);
        adam_step(params, pert_grad, adam, lr);
      } else {
        update_running_stats(params, clean.cache);
        adam_step(params, grad, adam, lr);
      }
      quantize_to_storage(params);
      result.log.steps.push_back(rec);
      ++step;
    }

    const double f1 = evaluate(params, *val_bank, config.eval_batch_size).macro_f1;
    result.log.epochs.push_back({epoch, step - 1, f1});
    if (!have_best || f1 > result.best_val_macro_f1) {
      have_best = true;
      result.best = params;
      result.best_epoch = epoch;
      result.best_val_macro_f1 = f1;
    }
  }
  result.last = std::move(params);
  return result;
}

EvalReport evaluate(const MlpParams& params, const FeatureBank& bank, std::size_t batch_size) {
  check_compatible(params.config, bank);
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "evaluation batch size must be >= 1");
  const auto& task = bank.task();
  Predictions all;
  std::vector<std::size_t> indices;
  for (std::size_t begin = 0; begin < bank.size(); begin += batch_size) {
    const std::size_t end = std::min(bank.size(), begin + batch_size);
    indices.resize(end - begin);
    std::iota(indices.begin(), indices.end(), begin);
    const Matrix logits = forward(params, bank.gather_features(indices), Mode::kEval).logits;
    Predictions part = predict_from_logits(logits, task);
    all.classes.insert(all.classes.end(), part.classes.begin(), part.classes.end());
    all.units.insert(all.units.end(), part.units.begin(), part.units.end());
  }
  if (task.is_multiclass()) return macro_f1_multiclass(all.classes, bank.class_labels(), task.width);
  return macro_f1_multilabel(all.units, bank.unit_labels(), task.width);
}

}  // namespace cvarprobe
