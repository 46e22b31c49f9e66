// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "cvarprobe/error.hpp"
#include "cvarprobe/metrics.hpp"
#include "cvarprobe/rng.hpp"
#include "metrics_oracle.hpp"

namespace cvarprobe {
namespace {

using Labels = std::vector<std::uint16_t>;
using Flags = std::vector<std::uint8_t>;

TEST(MacroF1Multiclass, WorkedExamples) {
  const auto r = macro_f1_multiclass(Labels{0, 1, 1, 2}, Labels{0, 0, 1, 2}, 3);
  ASSERT_EQ(r.classes.size(), 3u);
  EXPECT_DOUBLE_EQ(r.classes[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.classes[1].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.classes[2].f1, 1.0);
  EXPECT_NEAR(r.macro_f1, 7.0 / 9.0, 1e-15);
  EXPECT_EQ(r.classes[0].support, 2u);
  EXPECT_DOUBLE_EQ(r.classes[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.classes[0].recall, 0.5);

  const auto absent = macro_f1_multiclass(Labels{0, 0, 0}, Labels{0, 0, 0}, 2);
  EXPECT_EQ(absent.classes[1].f1, 0.0);
  EXPECT_EQ(absent.macro_f1, 0.5);

  const Labels all{0, 1, 2, 3, 1};
  EXPECT_EQ(macro_f1_multiclass(all, all, 4).macro_f1, 1.0);
}

TEST(MacroF1Multiclass, ZeroDivisionIsConfigurable) {
  const auto r = macro_f1_multiclass(Labels{0, 0}, Labels{0, 0}, 2, ZeroDivision{1.0});
  EXPECT_EQ(r.classes[1].f1, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(MacroF1Multiclass, Errors) {
  try {
    macro_f1_multiclass(Labels{0}, Labels{0, 1}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
  try {
    macro_f1_multiclass(Labels{3}, Labels{0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIndexOutOfRange);
  }
}

TEST(MacroF1Multilabel, WorkedExamples) {
  // unit 0 perfect, unit 1 always wrong; 2 positives per unit.
  const Flags truth{1, 1, 1, 1, 0, 0, 0, 0};
  const Flags preds{1, 0, 1, 0, 0, 1, 0, 1};
  const auto r = macro_f1_multilabel(preds, truth, 2);
  EXPECT_EQ(r.classes[0].f1, 1.0);
  EXPECT_EQ(r.classes[1].f1, 0.0);
  EXPECT_EQ(r.macro_f1, 0.5);
  EXPECT_TRUE(r.confusion.empty());
  EXPECT_EQ(r.classes[0].name, "unit0");

  const Flags zeros(12 * 5, 0);
  EXPECT_EQ(macro_f1_multilabel(zeros, zeros, 12).macro_f1, 0.0);
  EXPECT_EQ(macro_f1_multilabel(truth, truth, 2).macro_f1, 1.0);
}

TEST(MacroF1Multilabel, Errors) {
  EXPECT_THROW(macro_f1_multilabel(Flags{1, 0}, Flags{1, 0, 0}, 2), Error);
  try {
    macro_f1_multilabel(Flags{1, 0, 1}, Flags{1, 0, 1}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Confusion, Examples) {
  const auto diag = confusion_matrix(Labels{0, 1, 2}, Labels{0, 1, 2}, 3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(diag[r][c], r == c ? 1u : 0u);
  }
  const auto anti = confusion_matrix(Labels{1, 0}, Labels{0, 1}, 2);
  EXPECT_EQ(anti, (std::vector<std::vector<std::uint64_t>>{{0, 1}, {1, 0}}));
}

TEST(Confusion, ConservesCountsAndSupports) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(8);
    const std::size_t n = rng.below(200);
    Labels p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<std::uint16_t>(rng.below(k));
      t[i] = static_cast<std::uint16_t>(rng.below(k));
    }
    const auto cm = confusion_matrix(p, t, k);
    std::uint64_t total = 0;
    for (std::size_t r = 0; r < k; ++r) {
      const auto row = std::accumulate(cm[r].begin(), cm[r].end(), std::uint64_t{0});
      ASSERT_EQ(row, static_cast<std::uint64_t>(std::count(t.begin(), t.end(), r)));
      total += row;
    }
    ASSERT_EQ(total, n);
  }
}

TEST(MacroF1, MatchesBruteForceCounterExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(300);
    Labels p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<std::uint16_t>(rng.below(k));
      t[i] = static_cast<std::uint16_t>(rng.below(k));
    }
    const auto r = macro_f1_multiclass(p, t, k);
    const auto oracle = testing::brute_class_f1(p, t, k);
    for (std::size_t c = 0; c < k; ++c) ASSERT_EQ(r.classes[c].f1, oracle[c]);
    ASSERT_EQ(r.macro_f1, testing::mean(oracle));

    const std::size_t m = 1 + rng.below(12);
    Flags fp(n * m), ft(n * m);
    for (std::size_t i = 0; i < n * m; ++i) {
      fp[i] = static_cast<std::uint8_t>(rng.below(2));
      ft[i] = static_cast<std::uint8_t>(rng.below(2));
    }
    const auto ml = macro_f1_multilabel(fp, ft, m);
    const auto ml_oracle = testing::brute_unit_f1(fp, ft, m);
    for (std::size_t u = 0; u < m; ++u) ASSERT_EQ(ml.classes[u].f1, ml_oracle[u]);
    ASSERT_EQ(ml.macro_f1, testing::mean(ml_oracle));
  }
}

TEST(MacroF1, InvariantToSampleOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 50;
    Labels p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<std::uint16_t>(rng.below(4));
      t[i] = static_cast<std::uint16_t>(rng.below(4));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    Labels ps(n), ts(n);
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] = p[order[i]];
      ts[i] = t[order[i]];
    }
    ASSERT_NEAR(macro_f1_multiclass(p, t, 4).macro_f1, macro_f1_multiclass(ps, ts, 4).macro_f1, 1e-15);
  }
}

TEST(MacroF1, InvariantToRelabeling) {
  Rng rng(4);
  const std::vector<std::uint16_t> perm{2, 0, 3, 1};
  for (int trial = 0; trial < 30; ++trial) {
    Labels p(60), t(60), pr(60), tr(60);
    for (std::size_t i = 0; i < 60; ++i) {
      p[i] = static_cast<std::uint16_t>(rng.below(4));
      t[i] = static_cast<std::uint16_t>(rng.below(4));
      pr[i] = perm[p[i]];
      tr[i] = perm[t[i]];
    }
    const auto a = macro_f1_multiclass(p, t, 4);
    const auto b = macro_f1_multiclass(pr, tr, 4);
    for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(a.classes[c].f1, b.classes[perm[c]].f1);
    ASSERT_NEAR(a.macro_f1, b.macro_f1, 1e-15);
    ASSERT_GE(a.macro_f1, 0.0);
    ASSERT_LE(a.macro_f1, 1.0);
  }
}

TEST(MacroF1, SingleUnitEqualsBinaryF1) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Flags p(40), t(40);
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 40; ++i) {
      p[i] = static_cast<std::uint8_t>(rng.below(2));
      t[i] = static_cast<std::uint8_t>(rng.below(2));
      tp += p[i] && t[i];
      fp += p[i] && !t[i];
      fn += !p[i] && t[i];
    }
    const double f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    ASSERT_NEAR(macro_f1_multilabel(p, t, 1).macro_f1, f1, 1e-15);
  }
}

TEST(ReportCsv, Layout) {
  const auto r = macro_f1_multiclass(Labels{0, 1, 1, 2}, Labels{0, 0, 1, 2}, 3);
  std::ostringstream out;
  write_report_csv(r, out);
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "name,precision,recall,f1,support");
  EXPECT_EQ(lines[1].rfind("class0,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("macro,", 0), 0u);
  EXPECT_NE(lines[4].find(",4"), std::string::npos);
}

}  // namespace
}  // namespace cvarprobe
