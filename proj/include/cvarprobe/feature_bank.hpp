// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cvarprobe/matrix.hpp"

namespace cvarprobe {

enum class TaskType : std::uint8_t {
  kMulticlass = 0,  // one class index per sample, softmax head
  kMultilabel = 1,  // m independent binary units per sample, sigmoid head
};

/// Task shape: k classes (multiclass, k >= 2) or m units (multilabel, m >= 1).
struct TaskKind {
  TaskType type = TaskType::kMulticlass;
  std::uint16_t width = 2;

  static TaskKind multiclass(std::uint16_t classes);
  static TaskKind multilabel(std::uint16_t units);

  bool is_multiclass() const noexcept { return type == TaskType::kMulticlass; }
  bool operator==(const TaskKind&) const = default;
};

inline constexpr std::uint16_t kExpressionClasses = 8;
inline constexpr std::uint16_t kActionUnits = 12;
inline constexpr std::size_t kDefaultFeatureDim = 768;

/// Throws INVALID_ARGUMENT unless k >= 2 (multiclass) or m >= 1 (multilabel).
void validate_task(const TaskKind& task);

/// Labeled bank of n embeddings of dimension d. Immutable once built; the
/// constructors check every invariant (finite features, labels in range).
class FeatureBank {
 public:
  /// Multiclass bank. `features` is n*d row-major, `classes` has n entries.
  FeatureBank(TaskKind task, std::size_t dim, std::vector<float> features,
              std::vector<std::uint16_t> classes);
  /// Multilabel bank. `units` is n*m row-major flags in {0,1}.
  FeatureBank(TaskKind task, std::size_t dim, std::vector<float> features,
              std::vector<std::uint8_t> units);

  const TaskKind& task() const noexcept { return task_; }
  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const float> features() const noexcept { return features_; }
  std::span<const float> feature_row(std::size_t i) const noexcept {
    return {features_.data() + i * dim_, dim_};
  }

  /// Multiclass only; empty for multilabel banks.
  std::span<const std::uint16_t> class_labels() const noexcept { return classes_; }
  /// Multilabel only; n*m flags, empty for multiclass banks.
  std::span<const std::uint8_t> unit_labels() const noexcept { return units_; }
  std::span<const std::uint8_t> unit_row(std::size_t i) const noexcept {
    return {units_.data() + i * task_.width, task_.width};
  }

  /// Rows `indices` as a double matrix (|indices| x d).
  Matrix gather_features(std::span<const std::size_t> indices) const;
  /// All rows as a double matrix.
  Matrix feature_matrix() const;

  /// New bank made of the given rows, in the given order.
  FeatureBank subset(std::span<const std::size_t> indices) const;

  bool operator==(const FeatureBank&) const = default;

 private:
  void check_features() const;

  TaskKind task_;
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> features_;
  std::vector<std::uint16_t> classes_;
  std::vector<std::uint8_t> units_;
};

/// Header of an FBNK file, readable without touching the payload.
struct BankHeader {
  std::uint32_t version = 0;
  TaskKind task;
  std::uint64_t n = 0;
  std::uint32_t dim = 0;
};

inline constexpr std::uint32_t kBankFormatVersion = 1;
inline constexpr std::size_t kBankHeaderBytes = 4 + 4 + 1 + 2 + 8 + 4;

/// Exact on-disk size of an FBNK v1 file for the given shape.
std::uint64_t bank_file_size(const TaskKind& task, std::uint64_t n, std::uint64_t dim);

/// Reads and checks the FBNK header, including that the file is long
/// enough for the declared payload.
BankHeader read_bank_header(const std::filesystem::path& path);

/// Loads an FBNK v1 file, or a CSV file when the magic is absent.
/// For CSV input the class count of a multiclass bank is taken from
/// `csv_task` when given, else inferred as max(2, max label + 1).
FeatureBank load_bank(const std::filesystem::path& path,
                      std::optional<TaskKind> csv_task = std::nullopt);
FeatureBank load_bank_csv(const std::filesystem::path& path,
                          std::optional<TaskKind> csv_task = std::nullopt);

void save_bank(const FeatureBank& bank, const std::filesystem::path& path);
/// CSV export; floats are written in shortest round-trip form.
void save_bank_csv(const FeatureBank& bank, const std::filesystem::path& path);

/// Recipe for a synthetic bank. Multiclass: `class_counts[c]` samples of
/// class c around mean separation * e_(c mod d). Multilabel: `samples`
/// rows, unit j positive with probability `unit_rates[j]`, each positive
/// unit adding separation * e_(j mod d) to the mean.
struct SyntheticSpec {
  TaskKind task;
  std::size_t dim = 16;
  std::vector<std::size_t> class_counts;
  std::vector<double> unit_rates;
  std::size_t samples = 0;
  double separation = 1.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

void validate_synthetic_spec(const SyntheticSpec& spec);

/// Pure function of `spec`: rows are generated class-major and then
/// shuffled with the same stream.
FeatureBank gen_synthetic(const SyntheticSpec& spec);

struct BatchPlan {
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

/// Seeded Fisher-Yates permutation of [0, n) cut into consecutive batches.
std::vector<std::vector<std::size_t>> plan_batches(std::size_t n, const BatchPlan& plan);

/// Splits off a validation part of round(fraction * n) rows chosen by a
/// seeded permutation. Returns (train, validation).
std::pair<FeatureBank, FeatureBank> split_bank(const FeatureBank& bank, double fraction,
                                               std::uint64_t seed);

}  // namespace cvarprobe
