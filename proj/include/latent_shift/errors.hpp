#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latent_shift {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or table dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an argument outside the operation's domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite value.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A loss or metric could not be evaluated to a finite number.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// The moment system for the confounder shift could not be solved reliably.
/// Callers are expected to fall back to unit ratios.
class ShiftEstimationError : public Error {
 public:
  using Error::Error;
};

class DegenerateReweightError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SizeGuardError : public Error {
 public:
  using Error::Error;
};

}  // namespace latent_shift
