// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cvarprobe/feature_bank.hpp"
#include "cvarprobe/matrix.hpp"

namespace cvarprobe {

/// Shape and regularization settings of the classifier head:
/// d -> h1 -> h2 -> out, where each hidden block is
/// linear -> batch-norm -> ReLU -> dropout and the output layer is linear.
struct MlpConfig {
  TaskKind task;
  std::uint32_t input_dim = kDefaultFeatureDim;
  std::uint32_t hidden1 = 512;
  std::uint32_t hidden2 = 256;
  double dropout = 0.3;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  std::uint32_t output_dim() const noexcept { return task.width; }
  bool operator==(const MlpConfig&) const = default;
};

void validate_mlp_config(const MlpConfig& config);

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  bool operator==(const DenseLayer&) const = default;
};

struct NormAffine {
  std::vector<double> scale;
  std::vector<double> shift;
  bool operator==(const NormAffine&) const = default;
};

/// The trainable tensors of the head. Also the shape of gradients, Adam
/// moments and SAM perturbations.
struct Trainable {
  std::array<DenseLayer, 3> dense;
  std::array<NormAffine, 2> norm;

  /// Fixed traversal order: W1 b1 g1 s1 W2 b2 g2 s2 W3 b3.
  std::array<std::span<double>, 10> tensors();
  std::array<std::span<const double>, 10> tensors() const;

  /// Same shapes, all entries zero.
  Trainable zeros_like() const;
  std::size_t parameter_count() const;

  bool operator==(const Trainable&) const = default;
};

using Gradients = Trainable;

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool operator==(const RunningStats&) const = default;
};

struct MlpParams {
  MlpConfig config;
  Trainable trainable;
  std::array<RunningStats, 2> running;

  bool operator==(const MlpParams&) const = default;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, unit batch-norm
/// scale, zero shift, running mean 0 and variance 1. Values are rounded to
/// 32-bit storage precision.
MlpParams init_params(const MlpConfig& config, std::uint64_t seed);

/// Rounds every stored value to the nearest float, the checkpoint precision.
void quantize_to_storage(MlpParams& params);

enum class Mode { kTrain, kEval };

/// Per hidden block state needed by backward.
struct HiddenCache {
  Matrix normalized;    // xhat, b x h
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased, used to normalize
  std::vector<double> inv_std;
  Matrix pre_relu;      // scale * xhat + shift
  Matrix mask;          // 0 or 1/(1-p); all ones when p == 0
  Matrix output;        // block output fed into the next linear
};

struct ForwardCache {
  Mode mode = Mode::kEval;
  Matrix input;
  std::array<HiddenCache, 2> hidden;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// Pure forward pass. TRAIN normalizes with batch statistics and applies
/// inverted dropout drawn from `dropout_seed`; the same seed always yields
/// the same masks. Running statistics are not modified here, see
/// update_running_stats.
ForwardResult forward(const MlpParams& params, const Matrix& batch, Mode mode, std::uint64_t dropout_seed = 0);

/// running <- (1 - momentum) * running + momentum * batch_stat, with the
/// unbiased batch variance. Requires a TRAIN cache.
void update_running_stats(MlpParams& params, const ForwardCache& cache);

/// Row-wise softmax (multiclass) or element-wise sigmoid (multilabel).
Matrix activate(const Matrix& logits, const TaskKind& task);

/// Hard decisions from logits: argmax with lowest-index ties, or
/// logit >= 0 per unit.
struct Predictions {
  std::vector<std::uint16_t> classes;  // multiclass
  std::vector<std::uint8_t> units;     // multilabel, n x m row-major
};

Predictions predict_from_logits(const Matrix& logits, const TaskKind& task);
Predictions predict(const MlpParams& params, const Matrix& features, const TaskKind& task);

/// Reverse-mode gradients of the forward that produced `cache`, with
/// respect to all trainable tensors, including the dependence of the
/// batch statistics on the inputs.
Gradients backward(const MlpParams& params, const ForwardCache& cache, const Matrix& dloss_dlogits);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// MLPC v1. Tensor order after the header: W1 b1 bn1.scale bn1.shift
/// bn1.mean bn1.var W2 b2 bn2.scale bn2.shift bn2.mean bn2.var W3 b3, each
/// as float32 in row-major order.
void save_checkpoint(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_checkpoint(const std::filesystem::path& path);
/// Header only (no payload read), plus the size check.
MlpConfig read_checkpoint_header(const std::filesystem::path& path);

}  // namespace cvarprobe
