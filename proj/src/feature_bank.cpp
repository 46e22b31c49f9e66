// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/feature_bank.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>

#include "byte_io.hpp"
#include "cvarprobe/error.hpp"
#include "cvarprobe/rng.hpp"

namespace cvarprobe {
namespace {

constexpr std::array<char, 4> kBankMagic = {'F', 'B', 'N', 'K'};

std::string row_tag(std::size_t row) { return "row " + std::to_string(row); }

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_index_header(std::string_view cell, char prefix, std::size_t expected) {
  if (cell.size() < 2 || cell.front() != prefix) return false;
  std::size_t value = 0;
  const auto* first = cell.data() + 1;
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last && value == expected;
}

}  // namespace

TaskKind TaskKind::multiclass(std::uint16_t classes) {
  TaskKind t{TaskType::kMulticlass, classes};
  validate_task(t);
  return t;
}

TaskKind TaskKind::multilabel(std::uint16_t units) {
  TaskKind t{TaskType::kMultilabel, units};
  validate_task(t);
  return t;
}

void validate_task(const TaskKind& task) {
  if (task.is_multiclass() && task.width < 2) {
    throw Error(ErrorCode::kInvalidArgument, "multiclass task needs k >= 2, got " + std::to_string(task.width));
  }
  if (!task.is_multiclass() && task.width < 1) {
    throw Error(ErrorCode::kInvalidArgument, "multilabel task needs m >= 1");
  }
}

FeatureBank::FeatureBank(TaskKind task, std::size_t dim, std::vector<float> features,
                         std::vector<std::uint16_t> classes)
    : task_(task), n_(classes.size()), dim_(dim), features_(std::move(features)),
      classes_(std::move(classes)) {
  validate_task(task_);
  if (!task_.is_multiclass()) throw Error(ErrorCode::kTaskMismatch, "class labels given for a multilabel task");
  check_features();
  for (std::size_t i = 0; i < n_; ++i) {
    if (classes_[i] >= task_.width) {
      throw Error(ErrorCode::kLabelOutOfRange, row_tag(i) + ": label " + std::to_string(classes_[i]) +
                                                   " >= k=" + std::to_string(task_.width));
    }
  }
}

FeatureBank::FeatureBank(TaskKind task, std::size_t dim, std::vector<float> features,
                         std::vector<std::uint8_t> units)
    : task_(task), dim_(dim), features_(std::move(features)), units_(std::move(units)) {
  validate_task(task_);
  if (task_.is_multiclass()) throw Error(ErrorCode::kTaskMismatch, "unit labels given for a multiclass task");
  if (units_.size() % task_.width != 0) {
    throw Error(ErrorCode::kShapeMismatch, "unit label count " + std::to_string(units_.size()) +
                                               " is not a multiple of m=" + std::to_string(task_.width));
  }
  n_ = units_.size() / task_.width;
  check_features();
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (units_[i] > 1) {
      throw Error(ErrorCode::kLabelOutOfRange, row_tag(i / task_.width) + ": unit " +
                                                   std::to_string(i % task_.width) + " flag " +
                                                   std::to_string(units_[i]) + " not in {0,1}");
    }
  }
}

void FeatureBank::check_features() const {
  if (n_ < 1) throw Error(ErrorCode::kInvalidArgument, "feature bank needs n >= 1");
  if (dim_ < 1) throw Error(ErrorCode::kInvalidArgument, "feature bank needs d >= 1");
  if (features_.size() != n_ * dim_) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(n_ * dim_) + " feature values, got " +
                                               std::to_string(features_.size()));
  }
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (!std::isfinite(features_[i])) {
      throw Error(ErrorCode::kNonfiniteFeature,
                  row_tag(i / dim_) + ", column " + std::to_string(i % dim_) + " is not finite");
    }
  }
}

Matrix FeatureBank::gather_features(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), dim_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = feature_row(indices[r]);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dim_; ++c) dst[c] = src[c];
  }
  return out;
}

Matrix FeatureBank::feature_matrix() const {
  std::vector<std::size_t> all(n_);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gather_features(all);
}

FeatureBank FeatureBank::subset(std::span<const std::size_t> indices) const {
  std::vector<float> feats;
  feats.reserve(indices.size() * dim_);
  for (const std::size_t i : indices) {
    if (i >= n_) throw Error(ErrorCode::kIndexOutOfRange, "subset index " + std::to_string(i));
    const auto row = feature_row(i);
    feats.insert(feats.end(), row.begin(), row.end());
  }
  if (task_.is_multiclass()) {
    std::vector<std::uint16_t> labels;
    labels.reserve(indices.size());
    for (const std::size_t i : indices) labels.push_back(classes_[i]);
    return FeatureBank(task_, dim_, std::move(feats), std::move(labels));
  }
  std::vector<std::uint8_t> labels;
  labels.reserve(indices.size() * task_.width);
  for (const std::size_t i : indices) {
    const auto row = unit_row(i);
    labels.insert(labels.end(), row.begin(), row.end());
  }
  return FeatureBank(task_, dim_, std::move(feats), std::move(labels));
}

std::uint64_t bank_file_size(const TaskKind& task, std::uint64_t n, std::uint64_t dim) {
  const std::uint64_t label_bytes = task.is_multiclass() ? 2 * n : n * task.width;
  return kBankHeaderBytes + 4 * n * dim + label_bytes;
}

namespace {

BankHeader read_header(detail::LeReader& in) {
  std::array<char, 4> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kBankMagic) throw Error(ErrorCode::kMagicMismatch, "byte offset 0: expected FBNK magic");
  BankHeader h;
  h.version = in.u32();
  if (h.version != kBankFormatVersion) {
    throw Error(ErrorCode::kVersionUnsupported,
                "byte offset 4: version " + std::to_string(h.version) + " (only 1 is supported)");
  }
  const std::uint64_t flag_offset = in.offset();
  const std::uint8_t flag = in.u8();
  if (flag > 1) {
    throw Error(ErrorCode::kMagicMismatch,
                "byte offset " + std::to_string(flag_offset) + ": task flag " + std::to_string(flag));
  }
  h.task.type = static_cast<TaskType>(flag);
  h.task.width = in.u16();
  h.n = in.u64();
  h.dim = in.u32();
  try {
    validate_task(h.task);
  } catch (const Error& e) {
    throw Error(ErrorCode::kLabelOutOfRange, "byte offset 9: " + e.detail());
  }
  if (h.n == 0 || h.dim == 0) throw Error(ErrorCode::kInvalidArgument, "byte offset 11: n and d must be >= 1");
  const std::uint64_t expected = bank_file_size(h.task, h.n, h.dim);
  if (in.file_size() < expected) {
    throw Error(ErrorCode::kTruncatedFile, "header declares " + std::to_string(expected) + " bytes, file has " +
                                               std::to_string(in.file_size()));
  }
  if (in.file_size() > expected) {
    throw Error(ErrorCode::kTrailingData, "byte offset " + std::to_string(expected) + ": " +
                                              std::to_string(in.file_size() - expected) +
                                              " bytes after the label block");
  }
  return h;
}

bool has_bank_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  return in.gcount() == 4 && magic == kBankMagic;
}

}  // namespace

BankHeader read_bank_header(const std::filesystem::path& path) {
  detail::LeReader in(path);
  return read_header(in);
}

FeatureBank load_bank(const std::filesystem::path& path, std::optional<TaskKind> csv_task) {
  if (!has_bank_magic(path)) return load_bank_csv(path, csv_task);

  detail::LeReader in(path);
  const BankHeader h = read_header(in);
  const std::size_t n = h.n;
  const std::size_t d = h.dim;

  std::vector<float> features(n * d);
  std::vector<char> rowbuf(4 * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t row_offset = in.offset();
    in.bytes(rowbuf.data(), rowbuf.size());
    for (std::size_t c = 0; c < d; ++c) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(rowbuf[4 * c + b])) << (8 * b);
      }
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonfiniteFeature, "byte offset " + std::to_string(row_offset + 4 * c) + " (" +
                                                      row_tag(i) + ", column " + std::to_string(c) + ")");
      }
      features[i * d + c] = v;
    }
  }

  if (h.task.is_multiclass()) {
    std::vector<std::uint16_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t at = in.offset();
      labels[i] = in.u16();
      if (labels[i] >= h.task.width) {
        throw Error(ErrorCode::kLabelOutOfRange, "byte offset " + std::to_string(at) + " (" + row_tag(i) +
                                                     "): label " + std::to_string(labels[i]) +
                                                     " >= k=" + std::to_string(h.task.width));
      }
    }
    return FeatureBank(h.task, d, std::move(features), std::move(labels));
  }

  std::vector<std::uint8_t> units(n * h.task.width);
  for (std::size_t i = 0; i < units.size(); ++i) {
    const std::uint64_t at = in.offset();
    units[i] = in.u8();
    if (units[i] > 1) {
      throw Error(ErrorCode::kLabelOutOfRange, "byte offset " + std::to_string(at) + " (" +
                                                   row_tag(i / h.task.width) + "): flag " +
                                                   std::to_string(units[i]) + " not in {0,1}");
    }
  }
  return FeatureBank(h.task, d, std::move(features), std::move(units));
}

FeatureBank load_bank_csv(const std::filesystem::path& path, std::optional<TaskKind> csv_task) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kMalformedCsv, "empty file (no header)");
  const auto header = split_commas(trim(line));

  // Header is either label,f0.. or y0..y{m-1},f0..
  std::size_t label_cols = 0;
  bool multiclass = false;
  if (trim(header[0]) == "label") {
    multiclass = true;
    label_cols = 1;
  } else {
    while (label_cols < header.size() && parse_index_header(trim(header[label_cols]), 'y', label_cols)) {
      ++label_cols;
    }
    if (label_cols == 0) {
      throw Error(ErrorCode::kMalformedCsv, "header must start with 'label' or 'y0' (is it an FBNK file? magic absent)");
    }
  }
  const std::size_t dim = header.size() - label_cols;
  for (std::size_t c = 0; c < dim; ++c) {
    if (!parse_index_header(trim(header[label_cols + c]), 'f', c)) {
      throw Error(ErrorCode::kMalformedCsv, "header column " + std::to_string(label_cols + c) + " should be f" +
                                                std::to_string(c));
    }
  }
  if (dim == 0) throw Error(ErrorCode::kMalformedCsv, "header has no feature columns");
  if (csv_task && csv_task->is_multiclass() != multiclass) {
    throw Error(ErrorCode::kTaskMismatch, "CSV header does not match the requested task type");
  }
  if (csv_task && !multiclass && csv_task->width != label_cols) {
    throw Error(ErrorCode::kTaskMismatch, "CSV has " + std::to_string(label_cols) + " unit columns, expected " +
                                              std::to_string(csv_task->width));
  }

  std::vector<float> features;
  std::vector<std::uint16_t> classes;
  std::vector<std::uint8_t> units;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto cells = split_commas(trimmed);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kMalformedCsv, row_tag(row) + ": " + std::to_string(cells.size()) + " cells, header has " +
                                                std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < label_cols; ++c) {
      const auto cell = trim(cells[c]);
      unsigned long value = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::kMalformedCsv, row_tag(row) + ": label cell '" + std::string(cell) + "'");
      }
      if (multiclass) {
        const std::size_t limit = csv_task ? csv_task->width : 65535;
        if (value >= limit) {
          throw Error(ErrorCode::kLabelOutOfRange, row_tag(row) + ": label " + std::to_string(value) +
                                                       " >= k=" + std::to_string(limit));
        }
        classes.push_back(static_cast<std::uint16_t>(value));
      } else {
        if (value > 1) {
          throw Error(ErrorCode::kLabelOutOfRange, row_tag(row) + ": unit flag " + std::to_string(value));
        }
        units.push_back(static_cast<std::uint8_t>(value));
      }
    }
    for (std::size_t c = 0; c < dim; ++c) {
      const auto cell = trim(cells[label_cols + c]);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec == std::errc::result_out_of_range) {
        value = HUGE_VAL;
      } else if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::kMalformedCsv, row_tag(row) + ": feature cell '" + std::string(cell) + "'");
      }
      const auto f = static_cast<float>(value);
      if (!std::isfinite(f)) {
        throw Error(ErrorCode::kNonfiniteFeature, row_tag(row) + ", column f" + std::to_string(c) + " = '" +
                                                      std::string(cell) + "'");
      }
      features.push_back(f);
    }
    ++row;
  }
  if (row == 0) throw Error(ErrorCode::kInvalidArgument, "CSV has no data rows");

  if (multiclass) {
    TaskKind task;
    if (csv_task) {
      task = *csv_task;
    } else {
      const auto max_label = *std::max_element(classes.begin(), classes.end());
      task = TaskKind::multiclass(static_cast<std::uint16_t>(std::max<std::size_t>(2, max_label + 1)));
    }
    return FeatureBank(task, dim, std::move(features), std::move(classes));
  }
  return FeatureBank(TaskKind::multilabel(static_cast<std::uint16_t>(label_cols)), dim, std::move(features),
                     std::move(units));
}

void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  detail::LeWriter out(path);
  out.bytes(kBankMagic.data(), kBankMagic.size());
  out.u32(kBankFormatVersion);
  out.u8(static_cast<std::uint8_t>(bank.task().type));
  out.u16(bank.task().width);
  out.u64(bank.size());
  out.u32(static_cast<std::uint32_t>(bank.dim()));
  for (const float v : bank.features()) out.f32(v);
  if (bank.task().is_multiclass()) {
    for (const auto label : bank.class_labels()) out.u16(label);
  } else {
    for (const auto flag : bank.unit_labels()) out.u8(flag);
  }
  out.finish();
}

void save_bank_csv(const FeatureBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  const auto& task = bank.task();
  if (task.is_multiclass()) {
    out << "label";
  } else {
    for (std::size_t j = 0; j < task.width; ++j) out << (j ? ",y" : "y") << j;
  }
  for (std::size_t c = 0; c < bank.dim(); ++c) out << ",f" << c;
  out << '\n';

  std::array<char, 64> buf{};
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (task.is_multiclass()) {
      out << bank.class_labels()[i];
    } else {
      const auto row = bank.unit_row(i);
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << static_cast<int>(row[j]);
    }
    for (const float v : bank.feature_row(i)) {
      auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
      out << ',' << std::string_view(buf.data(), static_cast<std::size_t>(ptr - buf.data()));
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

void validate_synthetic_spec(const SyntheticSpec& spec) {
  validate_task(spec.task);
  if (spec.dim < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic dim must be >= 1");
  if (!(spec.separation > 0.0) || !std::isfinite(spec.separation)) {
    throw Error(ErrorCode::kInvalidArgument, "separation must be > 0");
  }
  if (!(spec.noise > 0.0) || !std::isfinite(spec.noise)) {
    throw Error(ErrorCode::kInvalidArgument, "noise must be > 0");
  }
  if (spec.task.is_multiclass()) {
    if (spec.class_counts.size() != spec.task.width) {
      throw Error(ErrorCode::kInvalidArgument, "need one count per class (" + std::to_string(spec.task.width) +
                                                   "), got " + std::to_string(spec.class_counts.size()));
    }
    for (const auto c : spec.class_counts) {
      if (c < 1) throw Error(ErrorCode::kInvalidArgument, "class counts must be >= 1");
    }
  } else {
    if (spec.unit_rates.size() != spec.task.width) {
      throw Error(ErrorCode::kInvalidArgument, "need one rate per unit (" + std::to_string(spec.task.width) +
                                                   "), got " + std::to_string(spec.unit_rates.size()));
    }
    for (const double r : spec.unit_rates) {
      if (!(r > 0.0 && r < 1.0)) throw Error(ErrorCode::kInvalidArgument, "unit rates must lie in (0,1)");
    }
    if (spec.samples < 1) throw Error(ErrorCode::kInvalidArgument, "multilabel sample count must be >= 1");
  }
}

FeatureBank gen_synthetic(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;

  std::vector<float> features;
  std::vector<std::uint16_t> classes;
  std::vector<std::uint8_t> units;
  std::size_t n = 0;

  if (spec.task.is_multiclass()) {
    n = std::accumulate(spec.class_counts.begin(), spec.class_counts.end(), std::size_t{0});
    features.reserve(n * d);
    for (std::size_t c = 0; c < spec.class_counts.size(); ++c) {
      for (std::size_t s = 0; s < spec.class_counts[c]; ++s) {
        for (std::size_t j = 0; j < d; ++j) {
          const double mean = (j == c % d) ? spec.separation : 0.0;
          features.push_back(static_cast<float>(mean + spec.noise * rng.normal()));
        }
        classes.push_back(static_cast<std::uint16_t>(c));
      }
    }
  } else {
    n = spec.samples;
    const std::size_t m = spec.task.width;
    features.reserve(n * d);
    units.reserve(n * m);
    std::vector<double> mean(d);
    for (std::size_t s = 0; s < n; ++s) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t u = 0; u < m; ++u) {
        const bool positive = rng.uniform() < spec.unit_rates[u];
        units.push_back(positive ? 1 : 0);
        if (positive) mean[u % d] += spec.separation;
      }
      for (std::size_t j = 0; j < d; ++j) {
        features.push_back(static_cast<float>(mean[j] + spec.noise * rng.normal()));
      }
    }
  }

  // Fisher-Yates over rows so banks are not sorted by class.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  if (spec.task.is_multiclass()) {
    return FeatureBank(spec.task, d, std::move(features), std::move(classes)).subset(order);
  }
  return FeatureBank(spec.task, d, std::move(features), std::move(units)).subset(order);
}

std::vector<std::vector<std::size_t>> plan_batches(std::size_t n, const BatchPlan& plan) {
  if (plan.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(plan.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t full = n / plan.batch_size;
  const std::size_t count = plan.drop_last ? full : (n + plan.batch_size - 1) / plan.batch_size;
  if (count == 0) {
    throw Error(ErrorCode::kEmptyPlan, "n=" + std::to_string(n) + " with batch size " +
                                           std::to_string(plan.batch_size) + " yields no batches");
  }
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t begin = b * plan.batch_size;
    const std::size_t end = std::min(n, begin + plan.batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::pair<FeatureBank, FeatureBank> split_bank(const FeatureBank& bank, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "validation fraction must lie in (0,1)");
  }
  const std::size_t n = bank.size();
  const auto val_n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (val_n < 1 || val_n >= n) {
    throw Error(ErrorCode::kInvalidArgument, "validation fraction leaves an empty split for n=" + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::span<const std::size_t> all(order);
  return {bank.subset(all.subspan(val_n)), bank.subset(all.first(val_n))};
}

}  // namespace cvarprobe
