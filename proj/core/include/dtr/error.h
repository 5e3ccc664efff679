// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtr {

enum class ErrorCode {
  kEmptyLayout,
  kInvalidLayout,
  kNoPostVisualText,
  kOutOfRange,
  kInvalidDim,
  kShapeMismatch,
  kStaleCache,
  kEmptyQuerySet,
  kEmptyLayerSet,
  kZeroVisualMass,
  kMixedFrameCounts,
  kEmptyInput,
  kInvalidConfig,
  kLayerWindowOutOfRange,
  kFrameOutOfRange,
  kUnsupportedInTraceMode,
  kSinkFailure,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kChecksumFail,
  kMalformedHeader,
  kMissingLayers,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library is an Error carrying a typed code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace dtr
