#pragma once

#include <stdexcept>
#include <string>

namespace xio {

enum class ErrorCode {
  // numerical
  NearPiRotation,
  NonPDInitialCovariance,
  NonPDMeasurementCovariance,
  NonPDCovariance,
  SingularInnovation,
  NonFiniteInput,
  // malformed input / contract violations
  ShapeMismatch,
  OddSegmentCount,
  InsufficientData,
  InputTooShort,
  MalformedFile,
  NoOverlap,
  LengthMismatch,
  SequenceTooShort,
  InvalidConfig,
  // missing artifacts
  MissingExpert,
  MissingArtifact,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NearPiRotation: return "NearPiRotation";
    case ErrorCode::NonPDInitialCovariance: return "NonPDInitialCovariance";
    case ErrorCode::NonPDMeasurementCovariance: return "NonPDMeasurementCovariance";
    case ErrorCode::NonPDCovariance: return "NonPDCovariance";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddSegmentCount: return "OddSegmentCount";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InputTooShort: return "InputTooShort";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingExpert: return "MissingExpert";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

/// Process exit status for a failure of the given kind:
/// 2 malformed input, 3 numerical failure, 4 missing artifact.
inline int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NearPiRotation:
    case ErrorCode::NonPDInitialCovariance:
    case ErrorCode::NonPDMeasurementCovariance:
    case ErrorCode::NonPDCovariance:
    case ErrorCode::SingularInnovation:
    case ErrorCode::NonFiniteInput:
      return 3;
    case ErrorCode::MissingExpert:
    case ErrorCode::MissingArtifact:
      return 4;
    default:
      return 2;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xio
