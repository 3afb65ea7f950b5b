#pragma once

#include <stdexcept>
#include <string>

namespace exitsched {

enum class ErrorKind {
  kUsage,       // bad flags, bad arguments
  kData,        // log or file failed validation
  kInfeasible,  // budget outside [c_1, c_K]
  kIo,          // unreadable / unwritable path
};

/// Every recoverable failure in the library is thrown as an Error. The CLI maps
/// the kind onto its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kData: return "data_validation";
    case ErrorKind::kInfeasible: return "infeasible_budget";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace exitsched
