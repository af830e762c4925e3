// SPDX-License-Identifier: Apache-2.0
#include "arec/error.hpp"

namespace arec {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedChunk: return "TruncatedChunk";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidToken: return "InvalidToken";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyContext: return "EmptyContext";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::EmptyCorpusAfterRemoval: return "EmptyCorpusAfterRemoval";
    case ErrorCode::SingularKernel: return "SingularKernel";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NegativeAmount: return "NegativeAmount";
    case ErrorCode::UnconfiguredBucket: return "UnconfiguredBucket";
    case ErrorCode::InvalidUsage: return "InvalidUsage";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace arec
