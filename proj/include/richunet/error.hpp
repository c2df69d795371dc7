#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace richunet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration or hyperparameter violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API (e.g. backward from a non-scalar).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A metric has no defined value for its inputs (e.g. HD95 of an empty mask).
class MetricUndefined : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace richunet
