// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/error.hpp"

namespace adafusion {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidManifest: return "InvalidManifest";
    case ErrorKind::EmptyIntersection: return "EmptyIntersection";
    case ErrorKind::DuplicateTile: return "DuplicateTile";
    case ErrorKind::UnknownTile: return "UnknownTile";
    case ErrorKind::TargetDimTooLarge: return "TargetDimTooLarge";
    case ErrorKind::MissingSource: return "MissingSource";
    case ErrorKind::DuplicateSource: return "DuplicateSource";
    case ErrorKind::RhoOutOfRange: return "RhoOutOfRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingForwardCache: return "MissingForwardCache";
    case ErrorKind::EmptyBag: return "EmptyBag";
    case ErrorKind::TooFewSources: return "TooFewSources";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::VariantHasNoTuner: return "VariantHasNoTuner";
    case ErrorKind::VariantTaskMismatch: return "VariantTaskMismatch";
    case ErrorKind::EmptyMap: return "EmptyMap";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

void fail(ErrorKind kind, const std::string& detail) { throw Error(kind, detail); }

}  // namespace adafusion
