#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rigidity {

enum class ErrorKind {
  InvalidArgument,
  NotExpanding,
  InvalidSystem,
  NoConvergence,
  DegenerateDensity,
  UnsupportedFamily,
  ConeNotPreserved,
  DimensionUnsupported,
  BlockTooLarge,
  NotHyperbolic,
  ConeViolation,
  Overflow,
  Config,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NotExpanding: return "NotExpanding";
    case ErrorKind::InvalidSystem: return "InvalidSystem";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::DegenerateDensity: return "DegenerateDensity";
    case ErrorKind::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorKind::ConeNotPreserved: return "ConeNotPreserved";
    case ErrorKind::DimensionUnsupported: return "DimensionUnsupported";
    case ErrorKind::BlockTooLarge: return "BlockTooLarge";
    case ErrorKind::NotHyperbolic: return "NotHyperbolic";
    case ErrorKind::ConeViolation: return "ConeViolation";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

/// Single exception type for the library; `kind()` distinguishes the failure.
/// Config errors map to CLI exit code 2, everything else to 3.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace rigidity
