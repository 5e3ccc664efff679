// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/error.h"

namespace dtr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyLayout: return "EmptyLayout";
    case ErrorCode::kInvalidLayout: return "InvalidLayout";
    case ErrorCode::kNoPostVisualText: return "NoPostVisualText";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kInvalidDim: return "InvalidDim";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kEmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::kEmptyLayerSet: return "EmptyLayerSet";
    case ErrorCode::kZeroVisualMass: return "ZeroVisualMass";
    case ErrorCode::kMixedFrameCounts: return "MixedFrameCounts";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kLayerWindowOutOfRange: return "LayerWindowOutOfRange";
    case ErrorCode::kFrameOutOfRange: return "FrameOutOfRange";
    case ErrorCode::kUnsupportedInTraceMode: return "UnsupportedInTraceMode";
    case ErrorCode::kSinkFailure: return "SinkFailure";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kChecksumFail: return "ChecksumFail";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kMissingLayers: return "MissingLayers";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace dtr
