#pragma once

#include <stdexcept>
#include <string>

namespace rstgam {

/// Malformed or inconsistent input data (mesh files, panels, counts).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration knobs or preconditions on arguments.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure inside a fit (non-finite objective and the like).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rstgam
