#include "mvcl/errors.hpp"

namespace mvcl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidWindow: return "invalid-window";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kInvalidAnnotation: return "invalid-annotation";
    case ErrorCode::kInsufficientViews: return "insufficient-views";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kUndefinedSimilarity: return "undefined-similarity";
    case ErrorCode::kNoNegatives: return "no-negatives";
    case ErrorCode::kWrongArity: return "wrong-arity";
    case ErrorCode::kInvalidRating: return "invalid-rating";
    case ErrorCode::kStratification: return "stratification";
    case ErrorCode::kFrozenViolation: return "frozen-violation";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kEmptyData: return "empty-data";
    case ErrorCode::kMissingData: return "missing-data";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfiguration:
      return ErrorCategory::kUsage;
    case ErrorCode::kNumeric:
      return ErrorCategory::kNumeric;
    default:
      return ErrorCategory::kData;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace mvcl
