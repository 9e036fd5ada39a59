// SPDX-License-Identifier: Apache-2.0
#include "mixt/error.hpp"

namespace mixt {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidPermutation: return "InvalidPermutation";
    case Errc::AxisLengthMismatch: return "AxisLengthMismatch";
    case Errc::AxisOutOfRange: return "AxisOutOfRange";
    case Errc::InvalidLength: return "InvalidLength";
    case Errc::NonFinite: return "NonFinite";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::PlanInvalid: return "PlanInvalid";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::LayerCountMismatch: return "LayerCountMismatch";
    case Errc::EmptyPairSet: return "EmptyPairSet";
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

bool is_validation_error(Errc code) noexcept {
  switch (code) {
    case Errc::NonFinite:
    case Errc::NonFiniteLoss:
    case Errc::DegenerateFit:
      return false;
    default:
      return true;
  }
}

}  // namespace mixt
