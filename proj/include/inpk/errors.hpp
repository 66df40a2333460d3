#pragma once

#include <stdexcept>
#include <string>

namespace inpk {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform for the requested op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an op (zero norm, log of a non-positive value, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Every key of some attention query is masked out.
class DegenerateAttentionError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Invalid model / experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward from a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input whose content breaks a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Token id or name lookup failed.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Token sequence does not fit the context window.
class TruncationError : public Error {
 public:
  TruncationError(std::size_t required, std::size_t available)
      : Error("token sequence requires " + std::to_string(required) + " slots but only " +
              std::to_string(available) + " are available"),
        required_(required),
        available_(available) {}
  std::size_t required() const { return required_; }
  std::size_t available() const { return available_; }

 private:
  std::size_t required_;
  std::size_t available_;
};

// Stored artifact failed its checksum or container checks.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace inpk
