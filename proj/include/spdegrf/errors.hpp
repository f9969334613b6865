#pragma once

#include <stdexcept>
#include <string>

namespace spdegrf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidGridError : public Error {
 public:
  using Error::Error;
};

class OutOfDomainError : public Error {
 public:
  OutOfDomainError(double x, double y);
  double x() const { return x_; }
  double y() const { return y_; }

 private:
  double x_;
  double y_;
};

class InvalidBasisError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConfigurationError : public Error {
 public:
  using Error::Error;
};

// Raised by the Cholesky factorization when a pivot is not strictly positive.
// The pivot index refers to the original (unpermuted) row.
class NotPositiveDefiniteError : public Error {
 public:
  explicit NotPositiveDefiniteError(long pivot);
  long pivot() const { return pivot_; }

 private:
  long pivot_;
};

}  // namespace spdegrf
