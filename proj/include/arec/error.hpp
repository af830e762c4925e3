// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace arec {

enum class ErrorCode {
  // midi_ingest
  MalformedHeader,
  TruncatedChunk,
  UnsupportedFormat,
  EmptyInput,
  InvalidToken,
  // seq_model
  InvalidConfig,
  EmptyContext,
  EmptyCorpus,
  NonFiniteLoss,
  EmptyPrompt,
  // attribution
  EmptyCorpusAfterRemoval,
  SingularKernel,
  DimensionMismatch,
  // eval_harness
  LengthMismatch,
  // royalty_engine
  NegativeAmount,
  UnconfiguredBucket,
  InvalidUsage,
  // shared
  Io,
  Format,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every recoverable failure in the library is reported as an arec::Error.
/// The code identifies the contract that was violated; what() carries context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace arec
