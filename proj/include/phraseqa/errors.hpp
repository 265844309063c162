// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace phraseqa {

enum class ErrorCode {
  kMalformedJson,
  kSchemaViolation,
  kMisalignedAnswer,
  kAlignmentFailure,
  kEmptyCorpus,
  kShapeMismatch,
  kNonFinite,
  kNonFiniteGradient,
  kAllMasked,
  kIndexOutOfRange,
  kTooLong,
  kUnknownTokenId,
  kEmptyContext,
  kGoldOutOfWindow,
  kCandidateTooLong,
  kDimensionMismatch,
  kDuplicateEntry,
  kUnknownContext,
  kIoError,
  kFormatError,
  kChecksumMismatch,
  kEmptyGolds,
  kLengthMismatch,
  kInvalidArgument,
  kConfigError,
  kUnknownSubcommand,
};

const char* error_code_name(ErrorCode code);

// True for errors caused by input data or files rather than by usage or a bug.
bool is_data_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace phraseqa
