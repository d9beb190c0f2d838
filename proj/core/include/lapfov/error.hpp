#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lapfov {

enum class ErrorCode {
  kNonPositiveDepth,
  kDepthOutOfRange,
  kCameraFacingAway,
  kEmptyMask,
  kDisparityOutOfRange,
  kDimensionMismatch,
  kNoValidPixels,
  kSequenceTooShort,
  kDegenerateBaseline,
  kTexturelessInput,
  kEmptyInput,
  kNonPositiveTruth,
  kNoPointsInBounds,
  kEmptyCandidateSet,
  kDegenerateHomography,
  kSingularAffine,
  kReflectionDetected,
  kIllConditionedJacobian,
  kInvalidArgument,
  kInvalidConfig,
  kInvariantViolation,
  kIo,
  kPortUnavailable,
  kMalformedMessage,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (CLI exit codes, the session service) can branch without parsing
/// message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace lapfov
