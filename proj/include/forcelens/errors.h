#pragma once

#include <stdexcept>
#include <string>

namespace forcelens {

// Process exit codes used by the CLI. Every error carries one of these.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kInput = 3,
  kDivergence = 4,
  kSimulator = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// Bad arguments, unknown names, violated preconditions.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

// Unreadable, malformed, or inconsistent input files.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ExitCode::kInput, what) {}
};

class ParseError : public InputError {
 public:
  using InputError::InputError;
};

class VersionError : public InputError {
 public:
  using InputError::InputError;
};

// A named invariant of a domain type does not hold.
class InvariantError : public InputError {
 public:
  InvariantError(const std::string& invariant, const std::string& detail)
      : InputError("invariant violated: " + invariant + ": " + detail),
        invariant_(invariant) {}
  const std::string& invariant() const { return invariant_; }

 private:
  std::string invariant_;
};

class UnknownMaterialError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Numerical failures inside the forward or adjoint simulation.
class SimulationError : public Error {
 public:
  explicit SimulationError(const std::string& what)
      : Error(ExitCode::kSimulator, what) {}
};

class DegenerateDeformationError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class CflError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what)
      : Error(ExitCode::kDivergence, what) {}
};

}  // namespace forcelens
