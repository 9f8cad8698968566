#pragma once

#include <stdexcept>
#include <string>

namespace smcgcn {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kInputError = 2,
  kNumericalFailure = 3,
  kInvariantViolation = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad input data, configuration or precondition violation.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what)
      : Error(ExitCode::kInputError, what) {}
};

// Non-finite loss/gradient, singular matrices, particle collapse.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ExitCode::kNumericalFailure, what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what)
      : Error(ExitCode::kInvariantViolation, what) {}
};

inline const char* exit_code_name(ExitCode c) {
  switch (c) {
    case ExitCode::kSuccess: return "OK";
    case ExitCode::kInputError: return "E_INPUT";
    case ExitCode::kNumericalFailure: return "E_NUMERICAL";
    case ExitCode::kInvariantViolation: return "E_INVARIANT";
  }
  return "E_UNKNOWN";
}

}  // namespace smcgcn
