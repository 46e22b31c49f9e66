// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cvarprobe/error.hpp"
#include "cvarprobe/mlp.hpp"
#include "cvarprobe/optim.hpp"
#include "gradient_oracle.hpp"
#include "test_support.hpp"

namespace cvarprobe {
namespace {

MlpConfig small_config(std::uint16_t classes = 2) {
  MlpConfig c;
  c.task = TaskKind::multiclass(classes);
  c.input_dim = 4;
  c.hidden1 = 3;
  c.hidden2 = 3;
  c.dropout = 0.3;
  return c;
}

TEST(InitParams, DeterministicAndShaped) {
  const auto a = init_params(small_config(), 1);
  const auto b = init_params(small_config(), 1);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == init_params(small_config(), 2));
  EXPECT_EQ(a.trainable.dense[0].weight.rows(), 3u);
  EXPECT_EQ(a.trainable.dense[0].weight.cols(), 4u);
  EXPECT_EQ(a.trainable.dense[2].weight.rows(), 2u);
  for (const double v : a.trainable.dense[1].bias) EXPECT_EQ(v, 0.0);
  for (const double v : a.trainable.norm[0].scale) EXPECT_EQ(v, 1.0);
  for (const double v : a.running[1].var) EXPECT_EQ(v, 1.0);
}

TEST(InitParams, HeNormalScale) {
  MlpConfig c = small_config();
  c.input_dim = 100;
  c.hidden1 = 1000;
  const auto p = init_params(c, 5);
  const auto w = p.trainable.dense[0].weight.values();
  ASSERT_EQ(w.size(), 100000u);
  double sum = 0.0, sq = 0.0;
  for (const double v : w) {
    sum += v;
    sq += v * v;
  }
  const double mean = sum / w.size();
  const double sd = std::sqrt(sq / w.size() - mean * mean);
  EXPECT_NEAR(sd, std::sqrt(2.0 / 100.0), 0.05 * std::sqrt(2.0 / 100.0));
}

TEST(InitParams, RejectsBadConfig) {
  MlpConfig c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(init_params(c, 0), Error);
  c = small_config();
  c.bn_momentum = 0.0;
  EXPECT_THROW(init_params(c, 0), Error);
}

TEST(Forward, EvalIgnoresDropoutSeed) {
  Rng rng(1);
  const auto p = testing::random_params(rng, small_config());
  const auto x = testing::random_matrix(rng, 5, 4);
  EXPECT_EQ(forward(p, x, Mode::kEval, 1).logits, forward(p, x, Mode::kEval, 999).logits);
}

TEST(Forward, TrainDropoutDependsOnSeedOnly) {
  Rng rng(2);
  const auto p = testing::random_params(rng, small_config());
  const auto x = testing::random_matrix(rng, 6, 4);
  EXPECT_EQ(forward(p, x, Mode::kTrain, 3).logits, forward(p, x, Mode::kTrain, 3).logits);
  const auto& mask = forward(p, x, Mode::kTrain, 3).cache.hidden[0].mask;
  for (const double m : mask.values()) EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.7);
}

TEST(Forward, TrainMatchesEvalWhenRunningStatsEqualBatchStats) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    MlpConfig c = small_config(3);
    c.dropout = 0.0;
    auto p = testing::random_params(rng, c);
    const auto x = testing::random_matrix(rng, 7, 4);
    const auto train = forward(p, x, Mode::kTrain, 0);
    for (std::size_t l = 0; l < 2; ++l) {
      p.running[l].mean = train.cache.hidden[l].batch_mean;
      p.running[l].var = train.cache.hidden[l].batch_var;
    }
    const auto eval = forward(p, x, Mode::kEval);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(train.logits(i, j), eval.logits(i, j), 1e-5);
    }
  }
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  auto p = init_params(small_config(), 0);
  for (auto t : p.trainable.tensors()) std::fill(t.begin(), t.end(), 0.0);
  Rng rng(4);
  const auto x = testing::random_matrix(rng, 3, 4);
  const Matrix eval = forward(p, x, Mode::kEval).logits;
  const Matrix train = forward(p, x, Mode::kTrain, 1).logits;
  for (const double v : eval.values()) EXPECT_EQ(v, 0.0);
  for (const double v : train.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, Errors) {
  const auto p = init_params(small_config(), 0);
  try {
    forward(p, Matrix(2, 5), Mode::kEval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  try {
    forward(p, Matrix(1, 4), Mode::kTrain);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateBatch);
  }
  EXPECT_NO_THROW(forward(p, Matrix(1, 4), Mode::kEval));
}

TEST(Forward, RunningStatUpdate) {
  Rng rng(5);
  MlpConfig c = small_config();
  c.bn_momentum = 0.25;
  auto p = testing::random_params(rng, c);
  const auto before = p.running;
  const auto x = testing::random_matrix(rng, 4, 4);
  const auto fwd = forward(p, x, Mode::kTrain, 0);
  EXPECT_EQ(p.running, before);  // forward itself is pure
  update_running_stats(p, fwd.cache);
  const auto& h = fwd.cache.hidden[0];
  EXPECT_DOUBLE_EQ(p.running[0].mean[1], 0.75 * before[0].mean[1] + 0.25 * h.batch_mean[1]);
  EXPECT_DOUBLE_EQ(p.running[0].var[1], 0.75 * before[0].var[1] + 0.25 * h.batch_var[1] * 4.0 / 3.0);
  EXPECT_THROW(update_running_stats(p, forward(p, x, Mode::kEval).cache), Error);
}

// Dropout is inverted, so the dropout layer's output is unbiased for the
// undropped activation. Checked per element at 3 standard errors.
TEST(Forward, DropoutPreservesExpectation) {
  Rng rng(6);
  MlpConfig c = small_config();
  c.dropout = 0.4;
  const auto p = testing::random_params(rng, c);
  const auto x = testing::random_matrix(rng, 4, 4);
  MlpParams no_drop = p;
  no_drop.config.dropout = 0.0;
  const auto reference = forward(no_drop, x, Mode::kTrain, 0).cache.hidden[0].output;

  const int draws = 20000;
  Matrix sum(reference.rows(), reference.cols());
  Matrix sq(reference.rows(), reference.cols());
  for (int s = 0; s < draws; ++s) {
    const auto out = forward(p, x, Mode::kTrain, static_cast<std::uint64_t>(s)).cache.hidden[0].output;
    for (std::size_t k = 0; k < out.size(); ++k) {
      sum.values()[k] += out.values()[k];
      sq.values()[k] += out.values()[k] * out.values()[k];
    }
  }
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const double mean = sum.values()[k] / draws;
    const double var = sq.values()[k] / draws - mean * mean;
    const double se = std::sqrt(std::max(var, 0.0) / draws);
    EXPECT_LE(std::abs(mean - reference.values()[k]), 3.0 * se + 1e-12) << "element " << k;
  }
}

TEST(Activate, SoftmaxAndSigmoidValues) {
  Matrix z(1, 3);
  const auto uniform = activate(z, TaskKind::multiclass(3));
  for (const double v : uniform.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto half = activate(z, TaskKind::multilabel(3));
  for (const double v : half.values()) EXPECT_EQ(v, 0.5);

  z(0, 0) = 10.0;
  const auto p = activate(z, TaskKind::multiclass(3));
  // Reference values from 30-digit evaluation.
  EXPECT_NEAR(p(0, 0), 0.999909208384340978, 1e-15);
  EXPECT_NEAR(p(0, 1), 4.53958078295109094e-5, 1e-18);
  EXPECT_NEAR(p(0, 2), 4.53958078295109094e-5, 1e-18);
}

TEST(Activate, RangeProperties) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto z = testing::random_matrix(rng, 3, 1 + rng.below(8), 10.0);
    const auto soft = activate(z, TaskKind::multiclass(static_cast<std::uint16_t>(std::max<std::size_t>(2, z.cols()))));
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double s = 0.0;
      for (const double v : soft.row(i)) s += v;
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
    // Open interval only where it is representable: sigmoid rounds to 1.0
    // once z exceeds about 37.
    Matrix clipped = z;
    for (double& v : clipped.values()) v = std::clamp(v, -30.0, 30.0);
    const Matrix sig = activate(clipped, TaskKind::multilabel(1));
    for (const double v : sig.values()) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
  }
  Matrix big(1, 2);
  big(0, 0) = 1000.0;
  big(0, 1) = -1000.0;
  const auto p = activate(big, TaskKind::multiclass(2));
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_TRUE(std::isfinite(p(0, 1)));
}

TEST(Predict, DecisionRules) {
  Matrix z(2, 3);
  z(0, 0) = 2; z(0, 1) = 5; z(0, 2) = 1;
  z(1, 0) = 3; z(1, 1) = 3; z(1, 2) = -1;
  const auto mc = predict_from_logits(z, TaskKind::multiclass(3));
  EXPECT_EQ(mc.classes, (std::vector<std::uint16_t>{1, 0}));

  Matrix u(1, 3);
  u(0, 0) = -0.1; u(0, 1) = 0.0; u(0, 2) = 0.2;
  EXPECT_EQ(predict_from_logits(u, TaskKind::multilabel(3)).units, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Predict, UsesEvalForwardAndChecksTask) {
  Rng rng(8);
  const auto p = testing::random_params(rng, small_config());
  const auto x = testing::random_matrix(rng, 5, 4);
  EXPECT_EQ(predict(p, x, TaskKind::multiclass(2)).classes,
            predict_from_logits(forward(p, x, Mode::kEval).logits, TaskKind::multiclass(2)).classes);
  EXPECT_THROW(predict(p, x, TaskKind::multilabel(2)), Error);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  const auto p = testing::random_params(rng, small_config());
  const auto fwd = forward(p, testing::random_matrix(rng, 4, 4), Mode::kTrain, 1);
  const auto g = backward(p, fwd.cache, Matrix(4, 2));
  EXPECT_EQ(l1_norm(g), 0.0);
}

TEST(Backward, RejectsEvalCacheAndBadShape) {
  Rng rng(10);
  const auto p = testing::random_params(rng, small_config());
  const auto x = testing::random_matrix(rng, 4, 4);
  try {
    backward(p, forward(p, x, Mode::kEval).cache, Matrix(4, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCacheModeMismatch);
  }
  EXPECT_THROW(backward(p, forward(p, x, Mode::kTrain).cache, Matrix(3, 2)), Error);
}

// For L = mean_i ||z_i||^2 the output-layer weight gradient is
// 2 z^T h2 / b, with h2 the last hidden block output (hand derivation).
TEST(Backward, OutputLayerMatchesHandDerivation) {
  Rng rng(11);
  MlpConfig c;
  c.task = TaskKind::multiclass(2);
  c.input_dim = 2;
  c.hidden1 = 2;
  c.hidden2 = 2;
  c.dropout = 0.0;
  const auto p = testing::random_params(rng, c);
  const auto x = testing::random_matrix(rng, 2, 2);
  const auto fwd = forward(p, x, Mode::kTrain, 0);
  Matrix upstream(2, 2);
  for (std::size_t k = 0; k < 4; ++k) upstream.values()[k] = 2.0 * fwd.logits.values()[k] / 2.0;
  const auto g = backward(p, fwd.cache, upstream);
  const auto& h2 = fwd.cache.hidden[1].output;
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double expected = 2.0 * (fwd.logits(0, o) * h2(0, k) + fwd.logits(1, o) * h2(1, k)) / 2.0;
      EXPECT_NEAR(g.dense[2].weight(o, k), expected, 1e-14);
    }
    EXPECT_NEAR(g.dense[2].bias[o], fwd.logits(0, o) + fwd.logits(1, o), 1e-14);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const auto problem = testing::random_grad_problem(rng);
    const auto report = testing::finite_difference_check(problem);
    EXPECT_LT(report.max_rel_error, 1e-5) << "trial " << trial;
    EXPECT_LT(report.max_abs_error_degenerate, 1e-8) << "trial " << trial;
    EXPECT_GT(report.checked, 0u);
  }
}

TEST(Checkpoint, RoundTrip) {
  testing::ScratchDir dir("ckpt");
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    MlpConfig c = small_config(static_cast<std::uint16_t>(2 + rng.below(5)));
    if (trial % 2) c.task = TaskKind::multilabel(static_cast<std::uint16_t>(1 + rng.below(12)));
    c.input_dim = static_cast<std::uint32_t>(1 + rng.below(9));
    c.hidden1 = static_cast<std::uint32_t>(1 + rng.below(9));
    c.hidden2 = static_cast<std::uint32_t>(1 + rng.below(9));
    auto p = testing::random_params(rng, c);
    quantize_to_storage(p);
    save_checkpoint(p, dir / "m.ckpt");
    ASSERT_EQ(load_checkpoint(dir / "m.ckpt"), p);
    ASSERT_EQ(read_checkpoint_header(dir / "m.ckpt"), c);
  }
}

TEST(Checkpoint, CorruptMagic) {
  testing::ScratchDir dir("ckpt");
  save_checkpoint(init_params(small_config(), 1), dir / "m.ckpt");
  auto bytes = testing::read_bytes(dir / "m.ckpt");
  bytes[1] = 'X';
  testing::write_bytes(dir / "m.ckpt", bytes);
  try {
    load_checkpoint(dir / "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMagicMismatch);
  }
}

TEST(Checkpoint, HeaderPayloadConflict) {
  testing::ScratchDir dir("ckpt");
  MlpConfig c = small_config();
  c.hidden1 = 4;
  save_checkpoint(init_params(c, 1), dir / "m.ckpt");
  auto bytes = testing::read_bytes(dir / "m.ckpt");
  // h1 is the second u32 after magic, version and task flag.
  bytes[13] = 3;
  testing::write_bytes(dir / "m.ckpt", bytes);
  try {
    load_checkpoint(dir / "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeHeaderConflict);
  }
}

}  // namespace
}  // namespace cvarprobe
