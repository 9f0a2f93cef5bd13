#pragma once

#include <stdexcept>
#include <string>

namespace sg {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Extent/rank/dtype mismatch between tensors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (bad range, bad count, non-scalar loss, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Operation not valid in the current state (e.g. backward on a consumed graph).
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  explicit FormatError(const std::string& msg) : Error(msg), byte_offset_(0) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Inconsistent layer/block wiring detected at construction time.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown (non-finite values, impossible negative distances, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sg
