#pragma once

#include <stdexcept>
#include <string>

namespace ebil {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, missing or out-of-bounds data, including file I/O (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix shapes that do not agree.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf where a finite value is required, or a diverging optimizer
/// (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations before meeting its tolerance.
class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, double residual, long iterations)
      : NumericError(what), residual_(residual), iterations_(iterations) {}

  double residual() const { return residual_; }
  long iterations() const { return iterations_; }

 private:
  double residual_;
  long iterations_;
};

}  // namespace ebil
