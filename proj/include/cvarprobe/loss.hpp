// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cvarprobe/matrix.hpp"

namespace cvarprobe {

/// Per-sample losses of a batch and the gradient of each sample's own loss
/// with respect to its logits (row i of `dlogits` belongs to sample i).
struct SampleLosses {
  std::vector<double> values;
  Matrix dlogits;
};

/// l_i = -log softmax(z_i)[y_i] via log-sum-exp; gradient softmax - onehot.
SampleLosses cross_entropy(const Matrix& logits, std::span<const std::uint16_t> labels);

/// Mean over units of the logistic loss max(z,0) - z*y + log(1 + e^-|z|);
/// gradient (sigmoid(z) - y) / m. `labels` is b x m row-major in {0,1}.
SampleLosses binary_cross_entropy(const Matrix& logits, std::span<const std::uint8_t> labels);

inline double hinge(double a) noexcept { return a > 0.0 ? a : 0.0; }

/// Tail level alpha in (0, 1]. alpha = 1 is the average-loss endpoint,
/// kept so the mean-loss reduction is expressible exactly.
struct CvarConfig {
  double alpha = 0.3;
  double tolerance = 1e-9;
  std::size_t max_iterations = 200;
};

void validate_cvar_config(const CvarConfig& config);

/// Number of tail samples, ceil(alpha * b), at least 1. A 1e-9 slack on the
/// product keeps values like 0.7 * 10 from rounding up to 8.
std::size_t tail_count(double alpha, std::size_t b);

struct CvarSolution {
  double lambda = 0.0;
  double objective = 0.0;
  std::size_t tail = 0;                 // k = ceil(alpha * b)
  std::vector<std::size_t> active;      // indices of the k largest losses, ascending
  std::vector<double> weights;          // 1/(alpha b) on `active`, else 0
  std::size_t iterations = 0;
  bool hit_iteration_cap = false;
};

/// lambda + (1/(alpha b)) * sum_i [l_i - lambda]_+
double cvar_objective(std::span<const double> losses, double lambda, double alpha);

/// Bisection on lambda over [min l, max l] driven by the sign of the
/// subgradient 1 - #{l_i > lambda}/(alpha b). The final bracket is snapped
/// to the k-th largest loss it contains, so lambda* equals that order
/// statistic exactly.
CvarSolution cvar_lambda_search(std::span<const double> losses, const CvarConfig& config);

/// Batch logit gradient: row i of `per_sample_dlogits` scaled by w_i.
Matrix cvar_weights_to_logit_grad(const CvarSolution& solution, const Matrix& per_sample_dlogits);

}  // namespace cvarprobe
