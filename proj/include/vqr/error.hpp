#pragma once

#include <stdexcept>
#include <string>

namespace vqr {

enum class ErrorKind {
  Io,
  Parse,
  MissingColumn,
  EmptyData,
  InvalidGrid,
  Config,
  InvalidInput,
  NonConvergence,
  InsufficientMass,
  EmptyBall,
  Unsupported,
  Numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::MissingColumn: return "missing-column";
    case ErrorKind::EmptyData: return "empty-data";
    case ErrorKind::InvalidGrid: return "invalid-grid";
    case ErrorKind::Config: return "config";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::InsufficientMass: return "insufficient-mass";
    case ErrorKind::EmptyBall: return "empty-ball";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace vqr
