#pragma once

#include <stdexcept>
#include <string>

namespace mslr {

// Root of every error thrown by the library. Subclasses mark the category so
// callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation needs.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A configuration value is outside its legal range (e.g. C % groups != 0).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A call argument is invalid (e.g. k > reference size).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Internal structural invariant broken (mask nesting, missing tokens).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// The reconstruction loss has no masked targets.
class UndefinedLossError : public Error {
 public:
  using Error::Error;
};

// Text input could not be parsed. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Binary container is malformed (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint was produced under a different model configuration.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// A finite-difference check could not be carried out meaningfully.
class InvalidCheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace mslr
