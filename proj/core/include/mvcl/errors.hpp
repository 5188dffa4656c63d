#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvcl {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidWindow,
  kOutOfBounds,
  kInvalidAnnotation,
  kInsufficientViews,
  kShape,
  kNumeric,
  kRange,
  kUndefinedSimilarity,
  kNoNegatives,
  kWrongArity,
  kInvalidRating,
  kStratification,
  kFrozenViolation,
  kUndefinedMetric,
  kEmptyData,
  kMissingData,
  kConfiguration,
  kCorruptCheckpoint,
  kVersionMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Broad grouping used by the command-line front end to pick an exit status.
enum class ErrorCategory { kUsage, kData, kNumeric };

ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace mvcl
