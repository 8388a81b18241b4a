#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace jemcal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that cannot be combined by an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data that is not usable (non-finite values and the like).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Class index or element index out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. `row()` is 1-based; 0 when not tied to a row.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0)
      : Error(row == 0 ? what : "row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A post-hoc calibrator could not be fitted on the given data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// An SGLD chain produced a non-finite or exploding energy/gradient.
class SgldDivergence : public Error {
 public:
  SgldDivergence(const std::string& what, int step) : Error(what), step_(step) {}
  /// Zero-based index of the update step at which divergence was detected.
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Training could not continue (non-finite loss after the divergence policy ran out).
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace jemcal
