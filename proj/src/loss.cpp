// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cvarprobe/error.hpp"

namespace cvarprobe {

SampleLosses cross_entropy(const Matrix& logits, std::span<const std::uint16_t> labels) {
  if (labels.size() != logits.rows()) {
    throw Error(ErrorCode::kSizeMismatch, std::to_string(labels.size()) + " labels for " +
                                              std::to_string(logits.rows()) + " logit rows");
  }
  const std::size_t k = logits.cols();
  SampleLosses out{std::vector<double>(logits.rows()), Matrix(logits.rows(), k)};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= k) {
      throw Error(ErrorCode::kLabelOutOfRange, "row " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                                                   " >= k=" + std::to_string(k));
    }
    const auto z = logits.row(i);
    const auto top_it = std::max_element(z.begin(), z.end());
    const double top = *top_it;
    const auto top_index = static_cast<std::size_t>(top_it - z.begin());
    // log(1 + rest) with the max term split off keeps digits when one
    // logit dominates.
    double rest = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != top_index) rest += std::exp(z[j] - top);
    }
    const double log_norm = top + std::log1p(rest);
    out.values[i] = (top - z[labels[i]]) + std::log1p(rest);
    auto g = out.dlogits.row(i);
    for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(z[j] - log_norm);
    g[labels[i]] -= 1.0;
  }
  return out;
}

SampleLosses binary_cross_entropy(const Matrix& logits, std::span<const std::uint8_t> labels) {
  if (labels.size() != logits.size()) {
    throw Error(ErrorCode::kSizeMismatch, std::to_string(labels.size()) + " unit labels for " +
                                              std::to_string(logits.size()) + " logits");
  }
  const std::size_t m = logits.cols();
  const auto md = static_cast<double>(m);
  SampleLosses out{std::vector<double>(logits.rows()), Matrix(logits.rows(), m)};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    auto g = out.dlogits.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint8_t y = labels[i * m + j];
      if (y > 1) {
        throw Error(ErrorCode::kLabelNotBinary, "row " + std::to_string(i) + ", unit " + std::to_string(j) +
                                                    ": label " + std::to_string(y));
      }
      const double zv = z[j];
      total += std::max(zv, 0.0) - zv * y + std::log1p(std::exp(-std::abs(zv)));
      const double sig = zv >= 0.0 ? 1.0 / (1.0 + std::exp(-zv)) : std::exp(zv) / (1.0 + std::exp(zv));
      g[j] = (sig - y) / md;
    }
    out.values[i] = total / md;
  }
  return out;
}

void validate_cvar_config(const CvarConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0,1], got " + std::to_string(config.alpha));
  }
  if (!(config.tolerance > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda tolerance must be > 0");
  if (config.max_iterations < 1) throw Error(ErrorCode::kInvalidArgument, "max iterations must be >= 1");
}

std::size_t tail_count(double alpha, std::size_t b) {
  const double scaled = alpha * static_cast<double>(b);
  const auto k = static_cast<std::size_t>(std::ceil(scaled - 1e-9));
  return std::clamp<std::size_t>(k, 1, b);
}

double cvar_objective(std::span<const double> losses, double lambda, double alpha) {
  double excess = 0.0;
  for (const double l : losses) excess += hinge(l - lambda);
  return lambda + excess / (alpha * static_cast<double>(losses.size()));
}

CvarSolution cvar_lambda_search(std::span<const double> losses, const CvarConfig& config) {
  validate_cvar_config(config);
  if (losses.empty()) throw Error(ErrorCode::kEmptyLosses, "CVaR needs at least one loss");
  const std::size_t b = losses.size();
  CvarSolution sol;
  sol.tail = tail_count(config.alpha, b);
  const std::size_t k = sol.tail;

  const auto count_above = [&](double lambda) {
    return static_cast<std::size_t>(std::count_if(losses.begin(), losses.end(), [&](double l) { return l > lambda; }));
  };

  // Invariant: #{l > hi} < k (subgradient at hi is positive). At lo the
  // subgradient is <= 0 unless lo itself is already the answer.
  auto [min_it, max_it] = std::minmax_element(losses.begin(), losses.end());
  double lo = *min_it;
  double hi = *max_it;
  while (hi - lo >= config.tolerance) {
    if (sol.iterations == config.max_iterations) {
      sol.hit_iteration_cap = true;
      break;
    }
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;  // bracket no longer splittable
    ++sol.iterations;
    if (count_above(mid) >= k) {
      lo = mid;
    } else {
      hi = mid;
    }
  }

  if (sol.hit_iteration_cap) {
    sol.lambda = lo + 0.5 * (hi - lo);
  } else {
    // Smallest loss in [lo, hi] with fewer than k losses above it: the k-th
    // largest loss.
    sol.lambda = hi;
    for (const double l : losses) {
      if (l >= lo && l <= hi && l < sol.lambda && count_above(l) < k) sol.lambda = l;
    }
  }
  sol.objective = cvar_objective(losses, sol.lambda, config.alpha);

  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return losses[a] > losses[c]; });
  sol.active.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(sol.active.begin(), sol.active.end());
  sol.weights.assign(b, 0.0);
  const double w = 1.0 / (config.alpha * static_cast<double>(b));
  for (const std::size_t i : sol.active) sol.weights[i] = w;
  return sol;
}

Matrix cvar_weights_to_logit_grad(const CvarSolution& solution, const Matrix& per_sample_dlogits) {
  if (solution.weights.size() != per_sample_dlogits.rows()) {
    throw Error(ErrorCode::kSizeMismatch, "solution has " + std::to_string(solution.weights.size()) +
                                              " weights for " + std::to_string(per_sample_dlogits.rows()) + " rows");
  }
  Matrix out(per_sample_dlogits.rows(), per_sample_dlogits.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double w = solution.weights[i];
    if (w == 0.0) continue;
    const auto src = per_sample_dlogits.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = w * src[j];
  }
  return out;
}

}  // namespace cvarprobe
