// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace cvarprobe {

struct ClassScore {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;  // true positives + false negatives
};

struct EvalReport {
  std::vector<ClassScore> classes;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t samples = 0;
  /// k x k, row = truth, column = prediction. Empty for multilabel reports.
  std::vector<std::vector<std::uint64_t>> confusion;
};

/// Value used whenever a precision, recall or F1 denominator is zero.
/// Classes without support still enter the macro mean.
struct ZeroDivision {
  double value = 0.0;
};

std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const std::uint16_t> preds,
                                                         std::span<const std::uint16_t> truth, std::size_t k);

EvalReport macro_f1_multiclass(std::span<const std::uint16_t> preds, std::span<const std::uint16_t> truth,
                               std::size_t k, ZeroDivision zero_division = {});

/// `preds` and `truth` are n x m row-major flags; each unit is scored as a
/// binary task on its positive class.
EvalReport macro_f1_multilabel(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truth,
                               std::size_t m, ZeroDivision zero_division = {});

/// name,precision,recall,f1,support rows, one per class, then `macro`.
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace cvarprobe
