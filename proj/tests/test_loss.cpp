// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cvar_oracle.hpp"
#include "cvarprobe/error.hpp"
#include "cvarprobe/loss.hpp"
#include "test_support.hpp"

namespace cvarprobe {
namespace {

Matrix row_matrix(std::initializer_list<double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.values().begin());
  return m;
}

std::vector<double> random_losses(Rng& rng, std::size_t b) {
  std::vector<double> l(b);
  for (double& v : l) v = std::abs(rng.normal()) * 2.0;
  return l;
}

TEST(CrossEntropy, Examples) {
  const std::vector<std::uint16_t> first{0};
  EXPECT_NEAR(cross_entropy(row_matrix({0, 0, 0}), first).values[0], std::log(3.0), 1e-15);
  // ln(1 + 2 e^-10) to 30 digits: 9.07957374672444462752e-5.
  EXPECT_NEAR(cross_entropy(row_matrix({10, 0, 0}), first).values[0], 9.07957374672444462752e-5, 1e-17);
  const auto g = cross_entropy(row_matrix({0, 0}), std::vector<std::uint16_t>{1});
  EXPECT_DOUBLE_EQ(g.dlogits(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.dlogits(0, 1), -0.5);
}

TEST(CrossEntropy, Errors) {
  try {
    cross_entropy(row_matrix({0, 0}), std::vector<std::uint16_t>{2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLabelOutOfRange);
  }
  EXPECT_THROW(cross_entropy(row_matrix({0, 0}), std::vector<std::uint16_t>{0, 1}), Error);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const auto r = cross_entropy(row_matrix({1000, -1000}), std::vector<std::uint16_t>{1});
  EXPECT_DOUBLE_EQ(r.values[0], 2000.0);
  EXPECT_TRUE(std::isfinite(r.dlogits(0, 0)));
}

TEST(BinaryCrossEntropy, Examples) {
  EXPECT_NEAR(binary_cross_entropy(row_matrix({0, 0, 0}), std::vector<std::uint8_t>{1, 0, 1}).values[0],
              std::log(2.0), 1e-15);
  // log(1 + e^-20) = 2.06115362031438e-9.
  EXPECT_NEAR(binary_cross_entropy(row_matrix({20, 20}), std::vector<std::uint8_t>{1, 1}).values[0],
              2.06115362031438070e-9, 1e-22);
  const auto g = binary_cross_entropy(row_matrix({0, 0}), std::vector<std::uint8_t>{1, 0});
  EXPECT_DOUBLE_EQ(g.dlogits(0, 0), -0.25);
  EXPECT_DOUBLE_EQ(g.dlogits(0, 1), 0.25);
}

TEST(BinaryCrossEntropy, RejectsNonBinaryLabels) {
  try {
    binary_cross_entropy(row_matrix({0, 0}), std::vector<std::uint8_t>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLabelNotBinary);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    Matrix z = testing::random_matrix(rng, 3, k, 3.0);
    std::vector<std::uint16_t> classes(3);
    std::vector<std::uint8_t> units(3 * k);
    for (auto& c : classes) c = static_cast<std::uint16_t>(rng.below(k));
    for (auto& u : units) u = static_cast<std::uint8_t>(rng.below(2));
    const auto ce = cross_entropy(z, classes);
    const auto bce = binary_cross_entropy(z, units);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double saved = z(i, j);
        z(i, j) = saved + h;
        const double ce_up = cross_entropy(z, classes).values[i];
        const double bce_up = binary_cross_entropy(z, units).values[i];
        z(i, j) = saved - h;
        const double ce_down = cross_entropy(z, classes).values[i];
        const double bce_down = binary_cross_entropy(z, units).values[i];
        z(i, j) = saved;
        const double ce_fd = (ce_up - ce_down) / (2 * h);
        const double bce_fd = (bce_up - bce_down) / (2 * h);
        const auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); };
        ASSERT_LT(rel(ce.dlogits(i, j), ce_fd), 1e-6);
        ASSERT_LT(rel(bce.dlogits(i, j), bce_fd), 1e-6);
      }
    }
  }
}

TEST(Hinge, Values) {
  EXPECT_EQ(hinge(-3.0), 0.0);
  EXPECT_EQ(hinge(0.0), 0.0);
  EXPECT_EQ(hinge(2.5), 2.5);
}

TEST(CvarObjective, Examples) {
  const std::vector<double> l{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(cvar_objective(l, 3.0, 0.5), 3.5);
  EXPECT_DOUBLE_EQ(cvar_objective(l, 7.0, 0.5), 7.0);
  EXPECT_DOUBLE_EQ(cvar_objective(std::vector<double>{0, 2}, -10.0, 1.0), 1.0);
}

TEST(CvarSearch, Examples) {
  const std::vector<double> l{1, 2, 3, 4};
  const auto s = cvar_lambda_search(l, CvarConfig{0.5});
  EXPECT_DOUBLE_EQ(s.objective, 3.5);
  EXPECT_EQ(s.lambda, 3.0);
  EXPECT_EQ(s.active, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(s.weights, (std::vector<double>{0, 0, 0.5, 0.5}));

  for (const double a : {0.1, 0.5, 0.9}) {
    const auto flat = cvar_lambda_search(std::vector<double>{5, 5, 5, 5}, CvarConfig{a});
    EXPECT_EQ(flat.lambda, 5.0);
    EXPECT_DOUBLE_EQ(flat.objective, 5.0);
  }

  const auto near_mean = cvar_lambda_search(l, CvarConfig{0.999999});
  EXPECT_NEAR(near_mean.objective, 2.5, 1e-5);
  EXPECT_EQ(near_mean.tail, 4u);
  EXPECT_DOUBLE_EQ(cvar_lambda_search(l, CvarConfig{1.0}).objective, 2.5);
}

TEST(CvarSearch, TiesBreakByAscendingIndex) {
  const auto s = cvar_lambda_search(std::vector<double>{2, 7, 7, 7, 1}, CvarConfig{0.4});
  EXPECT_EQ(s.tail, 2u);
  EXPECT_EQ(s.active, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.lambda, 7.0);
}

TEST(CvarSearch, Errors) {
  try {
    cvar_lambda_search(std::vector<double>{}, CvarConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyLosses);
  }
  EXPECT_THROW(cvar_lambda_search(std::vector<double>{1}, CvarConfig{0.0}), Error);
  EXPECT_THROW(cvar_lambda_search(std::vector<double>{1}, CvarConfig{1.5}), Error);
}

TEST(CvarSearch, IterationCapReturnsMidpointAndFlags) {
  CvarConfig c{0.5, 1e-12, 3};
  const auto s = cvar_lambda_search(std::vector<double>{0, 1, 2, 9}, c);
  EXPECT_TRUE(s.hit_iteration_cap);
  EXPECT_EQ(s.iterations, 3u);
  EXPECT_GE(s.lambda, 0.0);
  EXPECT_LE(s.lambda, 9.0);
}

TEST(CvarSearch, TailCountAvoidsRoundingUp) {
  EXPECT_EQ(tail_count(0.7, 10), 7u);
  EXPECT_EQ(tail_count(0.3, 10), 3u);
  EXPECT_EQ(tail_count(0.3, 32), 10u);
  EXPECT_EQ(tail_count(0.01, 10), 1u);
  EXPECT_EQ(tail_count(1.0, 64), 64u);
}

TEST(CvarSearch, MatchesBruteForceOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.below(64);
    const double alpha = 0.1 * static_cast<double>(1 + rng.below(9));
    auto losses = random_losses(rng, b);
    if (trial % 10 == 0) losses[rng.below(b)] = losses[0];  // ties
    const auto sol = cvar_lambda_search(losses, CvarConfig{alpha});
    const auto oracle = testing::brute_force_cvar(losses, alpha);
    ASSERT_NEAR(sol.objective, oracle.objective, 1e-7) << "trial " << trial;
    ASSERT_NEAR(sol.lambda, oracle.lambda, 1e-7) << "trial " << trial;
    ASSERT_EQ(sol.active.size(), sol.tail);
  }
}

TEST(CvarProperties, ConvexInLambda) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto losses = random_losses(rng, 1 + rng.below(64));
    const double alpha = 0.1 * static_cast<double>(1 + rng.below(9));
    const double a = rng.normal() * 3.0;
    const double b = rng.normal() * 3.0;
    const double mid = cvar_objective(losses, 0.5 * (a + b), alpha);
    ASSERT_LE(mid, 0.5 * (cvar_objective(losses, a, alpha) + cvar_objective(losses, b, alpha)) + 1e-12);
  }
}

TEST(CvarProperties, LimitsAndMonotonicity) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.below(64);
    const auto losses = random_losses(rng, b);
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(b);
    const double max = *std::max_element(losses.begin(), losses.end());
    EXPECT_NEAR(cvar_lambda_search(losses, CvarConfig{1.0}).objective, mean, 1e-12);
    EXPECT_NEAR(cvar_lambda_search(losses, CvarConfig{0.5 / static_cast<double>(b)}).objective, max, 1e-12);
    double previous = INFINITY;
    for (int step = 1; step <= 10; ++step) {
      const double value = cvar_lambda_search(losses, CvarConfig{0.1 * step}).objective;
      ASSERT_GE(value, mean - 1e-12);
      ASSERT_LE(value, previous + 1e-12);
      previous = value;
    }
  }
}

TEST(CvarWeights, GradientReconstruction) {
  Rng rng(5);
  const auto losses = random_losses(rng, 4);
  const auto sol = cvar_lambda_search(losses, CvarConfig{0.5});
  EXPECT_EQ(std::count(sol.weights.begin(), sol.weights.end(), 0.5), 2);
  const auto per_sample = testing::random_matrix(rng, 4, 3);
  const auto g = cvar_weights_to_logit_grad(sol, per_sample);
  for (std::size_t i = 0; i < 4; ++i) {
    const bool active = std::find(sol.active.begin(), sol.active.end(), i) != sol.active.end();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(g(i, j), active ? (1.0 / (0.5 * 4)) * per_sample(i, j) : 0.0);
  }
  const auto zero = cvar_weights_to_logit_grad(sol, Matrix(4, 3));
  for (const double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(cvar_weights_to_logit_grad(sol, Matrix(3, 3)), Error);
}

TEST(CvarWeights, FullTailIsAverage) {
  const auto sol = cvar_lambda_search(std::vector<double>{0.3, 0.1, 0.9, 0.4, 0.2}, CvarConfig{1.0});
  for (const double w : sol.weights) EXPECT_EQ(w, 1.0 / 5.0);
}

}  // namespace
}  // namespace cvarprobe
