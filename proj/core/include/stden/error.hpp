#pragma once

#include <stdexcept>
#include <string>

namespace stden {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input (graph file, CSV, config, checkpoint manifest).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in a computation that must stay finite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// ODE integration failure: NFE budget exhausted or step-size underflow.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing configuration key. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace stden
