// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mixt {

enum class Errc {
  ShapeMismatch,
  InvalidPermutation,
  AxisLengthMismatch,
  AxisOutOfRange,
  InvalidLength,
  NonFinite,
  DimensionMismatch,
  InvalidSpec,
  InvalidConfig,
  PlanInvalid,
  NonFiniteLoss,
  DegenerateFit,
  LayerCountMismatch,
  EmptyPairSet,
  FileNotFound,
  ParseError,
};

std::string_view to_string(Errc code) noexcept;

// True for errors that stem from bad inputs (exit code 2 in the CLI);
// false for numerical failures (exit code 3).
bool is_validation_error(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  Errc code() const noexcept { return code_; }
  // what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

}  // namespace mixt
