#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gsf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between two objects.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Invalid argument or precondition violation on a public entry point.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where a finite value was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss, gradient or activation.
class DivergenceError : public NumericError {
 public:
  explicit DivergenceError(std::size_t step, const std::string& detail = "non-finite loss")
      : NumericError(detail + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace gsf
