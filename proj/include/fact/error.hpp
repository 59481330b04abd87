// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fact {

enum class ErrorCode {
  ZeroNorm,
  IndexOutOfRange,
  InvalidParameter,
  NonFiniteEvaluation,
  NonFiniteInput,
  DimensionMismatch,
  StaleCache,
  AssumptionViolated,
  LambdaOutOfRange,
  EpochOutOfRange,
  EmptyDataset,
  EmptyClass,
  DuplicateLabel,
  NoVirtualPrototypes,
  InsufficientClasses,
  InsufficientShots,
  CoverageMismatch,
  EmptySequence,
  ParseError,
  RaggedRows,
  IoError,
  VersionMismatch,
  ChecksumMismatch,
  NumericalFailure,
  Usage,
};

std::string_view to_string(ErrorCode code);

/// Process exit status for an error: 1 usage, 2 data, 3 numerical.
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fact
