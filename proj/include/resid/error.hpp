#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace resid {

enum class ErrorKind {
  DimensionMismatch,
  NonFinite,
  NotOrthogonal,
  OddReflectionCount,
  SingularTarget,
  NegativeDeterminant,
  DepthTooSmall,
  NotSymmetricPSD,
  NotPSD,
  OutsideBall,
  InvalidArgument,
  DuplicatePoints,
  InvalidDataset,
  SeparationViolated,
  ProjectionFailed,
  SurrogateCorrelated,
  Format,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NotOrthogonal: return "NotOrthogonal";
    case ErrorKind::OddReflectionCount: return "OddReflectionCount";
    case ErrorKind::SingularTarget: return "SingularTarget";
    case ErrorKind::NegativeDeterminant: return "NegativeDeterminant";
    case ErrorKind::DepthTooSmall: return "DepthTooSmall";
    case ErrorKind::NotSymmetricPSD: return "NotSymmetricPSD";
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::OutsideBall: return "OutsideBall";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DuplicatePoints: return "DuplicatePoints";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::SeparationViolated: return "SeparationViolated";
    case ErrorKind::ProjectionFailed: return "ProjectionFailed";
    case ErrorKind::SurrogateCorrelated: return "SurrogateCorrelated";
    case ErrorKind::Format: return "Format";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind so
/// that drivers can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace resid
