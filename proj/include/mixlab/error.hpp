#pragma once

#include <stdexcept>
#include <string>

namespace mixlab {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wrong dimension or a parameter outside the family's domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Symbol outside the alphabet, malformed sample.
class DataError : public Error {
 public:
  using Error::Error;
};

// Gradient or Fisher requested where the log-likelihood is not differentiable.
class BoundaryError : public Error {
 public:
  using Error::Error;
};

// Context shorter than the Markov order.
class ContextError : public Error {
 public:
  using Error::Error;
};

// The family has no closed form for the requested quantity.
class NotAvailableError : public Error {
 public:
  using Error::Error;
};

// Every quadrature node assigns zero probability to the data.
class DegenerateEvidenceError : public Error {
 public:
  using Error::Error;
};

// Exact enumeration would be infeasible.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Malformed numerical input, e.g. a non-symmetric matrix.
class InputError : public Error {
 public:
  using Error::Error;
};

// SGLD iterate escaped far beyond the prior support.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixlab
