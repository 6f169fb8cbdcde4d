#pragma once

#include <stdexcept>
#include <string>

namespace rtbm {

enum class ErrorCode {
  // argument / shape problems
  DimensionMismatch,
  ShapeMismatch,
  LengthMismatch,
  UnsupportedDim,
  InvalidArgument,
  // data problems
  FileNotFound,
  IoError,
  ParseError,
  EmptyData,
  NonFiniteSample,
  MixedVisibleDims,
  DegenerateData,
  // numerical problems
  NonSymmetricOmega,
  NonPositiveDefiniteOmega,
  NonPositiveDefiniteSchur,
  NonDiagonalT,
  DegenerateA,
  TruncationOverflow,
  ThetaZeroEncountered,
  NonFiniteInput,
  NoFeasibleCandidate,
  Diverged,
  LineSearchFailed,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace rtbm
