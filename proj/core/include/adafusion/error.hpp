// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adafusion {

enum class ErrorKind {
  // I/O and file formats
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  NonFiniteValue,
  IoFailure,
  InvalidManifest,
  // alignment
  EmptyIntersection,
  DuplicateTile,
  UnknownTile,
  // embedding ops
  TargetDimTooLarge,
  MissingSource,
  DuplicateSource,
  RhoOutOfRange,
  // models
  ShapeMismatch,
  MissingForwardCache,
  EmptyBag,
  TooFewSources,
  LabelOutOfRange,
  // training
  NonFiniteLoss,
  ConfigInvalid,
  // metrics
  EmptyInput,
  DegenerateLabels,
  ZeroVariance,
  // interpretability / cli
  VariantHasNoTuner,
  VariantTaskMismatch,
  EmptyMap,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library. `kind()` is stable and is what the
/// CLI maps to exit codes; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& detail);

inline void require(bool condition, ErrorKind kind, const std::string& detail) {
  if (!condition) fail(kind, detail);
}

}  // namespace adafusion
