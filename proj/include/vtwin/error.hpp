#pragma once

#include <stdexcept>
#include <string>

namespace vtwin {

/// Base error for all library failures (invalid input, broken invariants,
/// non-physiological configurations).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value-type invariant was violated. `invariant()` names it.
class InvariantError : public Error {
 public:
  InvariantError(std::string invariant, const std::string& detail)
      : Error(invariant + ": " + detail), invariant_(std::move(invariant)) {}

  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string invariant_;
};

/// Pressure marched below zero, or a drop law was evaluated on a geometry
/// that gives a non-physical configuration.
class NonPhysiologicalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vtwin
