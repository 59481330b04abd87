// SPDX-License-Identifier: Apache-2.0
#include "fact/error.hpp"

namespace fact {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::AssumptionViolated: return "AssumptionViolated";
    case ErrorCode::LambdaOutOfRange: return "LambdaOutOfRange";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DuplicateLabel: return "DuplicateLabel";
    case ErrorCode::NoVirtualPrototypes: return "NoVirtualPrototypes";
    case ErrorCode::InsufficientClasses: return "InsufficientClasses";
    case ErrorCode::InsufficientShots: return "InsufficientShots";
    case ErrorCode::CoverageMismatch: return "CoverageMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedRows: return "RaggedRows";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage:
      return 1;
    case ErrorCode::ZeroNorm:
    case ErrorCode::NonFiniteEvaluation:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::NumericalFailure:
    case ErrorCode::AssumptionViolated:
      return 3;
    default:
      return 2;
  }
}

}  // namespace fact
