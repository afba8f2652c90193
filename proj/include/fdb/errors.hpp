#pragma once

#include <stdexcept>
#include <string>

namespace fdb {

// Exit-code contract, shared by the CLI and the error hierarchy:
//   0  success
//   1  semantic failure (an assumption or certified property does not hold)
//   2  I/O or parse failure
//   3  numerical non-convergence
enum class ExitCode : int {
  ok = 0,
  semantic = 1,
  io = 2,
  numerical = 3,
};

struct Error : std::runtime_error {
  Error(ExitCode c, const std::string& what) : std::runtime_error(what), code(c) {}
  ExitCode code;
};

// A model-level violation: failed assumption check, invariant breach,
// inadmissible configuration.
struct SemanticError : Error {
  explicit SemanticError(const std::string& what) : Error(ExitCode::semantic, what) {}
};

// Filesystem / JSON / schema trouble.
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

// An iteration failed to converge, a guard rail (overflow, degenerate
// statistics) tripped, or a precondition of a numerical routine is violated.
struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

}  // namespace fdb
