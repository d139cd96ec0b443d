#pragma once

#include <stdexcept>
#include <string>

namespace qcdlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that break a structural invariant (non-stochastic rows, bad lengths, ...).
class InvalidModel : public Error {
 public:
  using Error::Error;
};

/// A log-likelihood ratio is unbounded on a cell of positive probability.
class UnboundedLlr : public Error {
 public:
  using Error::Error;
};

/// A standing modelling assumption does not hold for the inputs given.
///
/// `assumption` carries the short tag ("A1", "A3", "P2", ...).
class AssumptionViolation : public Error {
 public:
  AssumptionViolation(std::string assumption, const std::string& what)
      : Error(assumption + " violated: " + what), assumption_(std::move(assumption)) {}

  const std::string& assumption() const noexcept { return assumption_; }

 private:
  std::string assumption_;
};

/// Argument outside the domain of a function (divergent CGF, drift not attainable, z <= 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Problem too large for the exact solvers.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Configuration file does not match the schema; `path` is a JSON pointer.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace qcdlab
