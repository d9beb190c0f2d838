#include "lapfov/error.hpp"

namespace lapfov {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kDepthOutOfRange: return "DepthOutOfRange";
    case ErrorCode::kCameraFacingAway: return "CameraFacingAway";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kDisparityOutOfRange: return "DisparityOutOfRange";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNoValidPixels: return "NoValidPixels";
    case ErrorCode::kSequenceTooShort: return "SequenceTooShort";
    case ErrorCode::kDegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::kTexturelessInput: return "TexturelessInput";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kNonPositiveTruth: return "NonPositiveTruth";
    case ErrorCode::kNoPointsInBounds: return "NoPointsInBounds";
    case ErrorCode::kEmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::kDegenerateHomography: return "DegenerateHomography";
    case ErrorCode::kSingularAffine: return "SingularAffine";
    case ErrorCode::kReflectionDetected: return "ReflectionDetected";
    case ErrorCode::kIllConditionedJacobian: return "IllConditionedJacobian";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kPortUnavailable: return "PortUnavailable";
    case ErrorCode::kMalformedMessage: return "MalformedMessage";
  }
  return "Unknown";
}

}  // namespace lapfov
