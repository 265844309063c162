// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/errors.hpp"

namespace phraseqa {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedJson: return "MalformedJson";
    case ErrorCode::kSchemaViolation: return "SchemaViolation";
    case ErrorCode::kMisalignedAnswer: return "MisalignedAnswer";
    case ErrorCode::kAlignmentFailure: return "AlignmentFailure";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kTooLong: return "TooLong";
    case ErrorCode::kUnknownTokenId: return "UnknownTokenId";
    case ErrorCode::kEmptyContext: return "EmptyContext";
    case ErrorCode::kGoldOutOfWindow: return "GoldOutOfWindow";
    case ErrorCode::kCandidateTooLong: return "CandidateTooLong";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDuplicateEntry: return "DuplicateEntry";
    case ErrorCode::kUnknownContext: return "UnknownContext";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kEmptyGolds: return "EmptyGolds";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kUnknownSubcommand: return "UnknownSubcommand";
  }
  return "Unknown";
}

bool is_data_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedJson:
    case ErrorCode::kSchemaViolation:
    case ErrorCode::kMisalignedAnswer:
    case ErrorCode::kAlignmentFailure:
    case ErrorCode::kEmptyCorpus:
    case ErrorCode::kIoError:
    case ErrorCode::kFormatError:
    case ErrorCode::kChecksumMismatch:
    case ErrorCode::kUnknownContext:
    case ErrorCode::kTooLong:
    case ErrorCode::kCandidateTooLong:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace phraseqa
