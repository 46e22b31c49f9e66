// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/metrics.hpp"

#include <iomanip>
#include <string>

#include "cvarprobe/error.hpp"

namespace cvarprobe {
namespace {

double ratio(std::uint64_t num, std::uint64_t den, const ZeroDivision& zd) {
  return den == 0 ? zd.value : static_cast<double>(num) / static_cast<double>(den);
}

ClassScore score(std::string name, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, const ZeroDivision& zd) {
  ClassScore s;
  s.name = std::move(name);
  s.precision = ratio(tp, tp + fp, zd);
  s.recall = ratio(tp, tp + fn, zd);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? zd.value : 2.0 * s.precision * s.recall / denom;
  s.support = tp + fn;
  return s;
}

void finish(EvalReport& r) {
  double p = 0.0, rec = 0.0, f = 0.0;
  for (const auto& c : r.classes) {
    p += c.precision;
    rec += c.recall;
    f += c.f1;
  }
  const auto count = static_cast<double>(r.classes.size());
  r.macro_precision = p / count;
  r.macro_recall = rec / count;
  r.macro_f1 = f / count;
}

}  // namespace

std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const std::uint16_t> preds,
                                                         std::span<const std::uint16_t> truth, std::size_t k) {
  if (preds.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                                std::to_string(truth.size()) + " labels");
  }
  std::vector<std::vector<std::uint64_t>> cm(k, std::vector<std::uint64_t>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= k || truth[i] >= k) {
      throw Error(ErrorCode::kIndexOutOfRange, "sample " + std::to_string(i) + " has a class index >= k=" +
                                                   std::to_string(k));
    }
    ++cm[truth[i]][preds[i]];
  }
  return cm;
}

EvalReport macro_f1_multiclass(std::span<const std::uint16_t> preds, std::span<const std::uint16_t> truth,
                               std::size_t k, ZeroDivision zero_division) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  EvalReport r;
  r.confusion = confusion_matrix(preds, truth, k);
  r.samples = preds.size();
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = r.confusion[c][c];
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    r.classes.push_back(score("class" + std::to_string(c), tp, fp, fn, zero_division));
  }
  finish(r);
  return r;
}

EvalReport macro_f1_multilabel(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truth,
                               std::size_t m, ZeroDivision zero_division) {
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "m must be >= 1");
  if (preds.size() != truth.size() || preds.size() % m != 0) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(preds.size()) + " predicted flags vs " +
                                               std::to_string(truth.size()) + " true flags for m=" + std::to_string(m));
  }
  const std::size_t n = preds.size() / m;
  EvalReport r;
  r.samples = n;
  for (std::size_t u = 0; u < m; ++u) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = preds[i * m + u];
      const auto t = truth[i * m + u];
      if (p > 1 || t > 1) {
        throw Error(ErrorCode::kShapeMismatch, "sample " + std::to_string(i) + ", unit " + std::to_string(u) +
                                                   " is not a 0/1 flag");
      }
      tp += (p == 1 && t == 1);
      fp += (p == 1 && t == 0);
      fn += (p == 0 && t == 1);
    }
    r.classes.push_back(score("unit" + std::to_string(u), tp, fp, fn, zero_division));
  }
  finish(r);
  return r;
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "name,precision,recall,f1,support\n";
  out << std::setprecision(17);
  std::uint64_t total = 0;
  for (const auto& c : report.classes) {
    out << c.name << ',' << c.precision << ',' << c.recall << ',' << c.f1 << ',' << c.support << '\n';
    total += c.support;
  }
  out << "macro," << report.macro_precision << ',' << report.macro_recall << ',' << report.macro_f1 << ','
      << total << '\n';
}

}  // namespace cvarprobe
