#pragma once

#include <stdexcept>
#include <string>

namespace elicit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (empty data, b > n, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Normal matrix is (numerically) rank deficient and no regularization was requested.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, long rank, long dimension)
      : Error(what), rank_(rank), dimension_(dimension) {}

  long rank() const noexcept { return rank_; }
  long dimension() const noexcept { return dimension_; }

 private:
  long rank_;
  long dimension_;
};

/// Elicited constraints admit no solution (an orientation cycle).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver hit its iteration cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input: CSV, JSON, rankings, configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Exact enumeration or brute force would exceed its size budget.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Probability model cannot be estimated from the given history.
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace elicit
