#pragma once

#include <stdexcept>
#include <string>

namespace nmrc {

// Base of every error raised by the library. Callers that only care about
// "did the computation succeed" catch this one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid physical or numerical input (non-positive times, T2 > 2 T1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// The requested geometric object does not exist for these parameters
// (no horizontal singular line, collinear point, vanishing determinant).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// An iterative or integration routine could not produce a result.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmrc
