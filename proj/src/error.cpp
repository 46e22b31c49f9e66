// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/error.hpp"

namespace cvarprobe {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kIoFailure: return "IO_FAILURE";
    case ErrorCode::kMagicMismatch: return "MAGIC_MISMATCH";
    case ErrorCode::kVersionUnsupported: return "VERSION_UNSUPPORTED";
    case ErrorCode::kTruncatedFile: return "TRUNCATED_FILE";
    case ErrorCode::kTrailingData: return "TRAILING_DATA";
    case ErrorCode::kMalformedCsv: return "MALFORMED_CSV";
    case ErrorCode::kLabelOutOfRange: return "LABEL_OUT_OF_RANGE";
    case ErrorCode::kLabelNotBinary: return "LABEL_NOT_BINARY";
    case ErrorCode::kNonfiniteFeature: return "NONFINITE_FEATURE";
    case ErrorCode::kEmptyPlan: return "EMPTY_PLAN";
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kDegenerateBatch: return "DEGENERATE_BATCH";
    case ErrorCode::kCacheModeMismatch: return "CACHE_MODE_MISMATCH";
    case ErrorCode::kShapeHeaderConflict: return "SHAPE_HEADER_CONFLICT";
    case ErrorCode::kEmptyLosses: return "EMPTY_LOSSES";
    case ErrorCode::kSizeMismatch: return "SIZE_MISMATCH";
    case ErrorCode::kStepOutOfRange: return "STEP_OUT_OF_RANGE";
    case ErrorCode::kTaskMismatch: return "TASK_MISMATCH";
    case ErrorCode::kLengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::kIndexOutOfRange: return "INDEX_OUT_OF_RANGE";
  }
  return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(error_name(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace cvarprobe
