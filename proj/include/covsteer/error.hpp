#pragma once

#include <stdexcept>
#include <string>

namespace covsteer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition (rank condition, positivity, ...) is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Controller synthesis failed (infeasible program or solver breakdown).
class SynthesisError : public Error {
 public:
  SynthesisError(const std::string& what, double largest_feasible_rho = -1.0)
      : Error(what), largest_feasible_rho_(largest_feasible_rho) {}

  /// Largest uncertainty radius for which the robust program was found
  /// feasible, or a negative value when not computed.
  double largest_feasible_rho() const { return largest_feasible_rho_; }

 private:
  double largest_feasible_rho_;
};

}  // namespace covsteer
