#pragma once

#include <stdexcept>
#include <string>

namespace denoise4d {

enum class ErrorCode {
  NotFound,
  MalformedLength,
  NonFiniteValue,
  UnknownClassId,
  IoFailure,
  ZeroRange,
  ShapeMismatch,
  ConfigMismatch,
  LengthMismatch,
  InvalidParams,
  OutOfRange,
  InsufficientSequences,
  TooFewPoints,
  NonFiniteGradient,
  DatasetEmpty,
  DivergenceDetected,
  MisalignedFrames,
  InvalidConfig,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::MalformedLength: return "MalformedLength";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::UnknownClassId: return "UnknownClassId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ZeroRange: return "ZeroRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InsufficientSequences: return "InsufficientSequences";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DatasetEmpty: return "DatasetEmpty";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::MisalignedFrames: return "MisalignedFrames";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace denoise4d
