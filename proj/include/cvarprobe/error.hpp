// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvarprobe {

enum class ErrorCode {
  kInvalidArgument,
  kIoFailure,
  kMagicMismatch,
  kVersionUnsupported,
  kTruncatedFile,
  kTrailingData,
  kMalformedCsv,
  kLabelOutOfRange,
  kLabelNotBinary,
  kNonfiniteFeature,
  kEmptyPlan,
  kShapeMismatch,
  kDegenerateBatch,
  kCacheModeMismatch,
  kShapeHeaderConflict,
  kEmptyLosses,
  kSizeMismatch,
  kStepOutOfRange,
  kTaskMismatch,
  kLengthMismatch,
  kIndexOutOfRange,
};

/// Upper-case name used on the command line and in messages,
/// e.g. "LABEL_OUT_OF_RANGE".
std::string_view error_name(ErrorCode code) noexcept;

/// Every failure raised by the library. what() carries the error name
/// followed by a human-readable detail (byte offset, row, shapes).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace cvarprobe
