#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace odre {

enum class ErrorCode {
  InvalidSpec,
  EmptyRange,
  DegenerateMap,
  StateOutOfDomain,
  ToleranceUnreachable,
  UnsupportedOrder,
  DomainViolation,
  UnboundedG,
  SizeMismatch,
  PathTooShort,
  UnsupportedCombination,
  Usage,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyRange: return "EmptyRange";
    case ErrorCode::DegenerateMap: return "DegenerateMap";
    case ErrorCode::StateOutOfDomain: return "StateOutOfDomain";
    case ErrorCode::ToleranceUnreachable: return "ToleranceUnreachable";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::UnboundedG: return "UnboundedG";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::PathTooShort: return "PathTooShort";
    case ErrorCode::UnsupportedCombination: return "UnsupportedCombination";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace odre
