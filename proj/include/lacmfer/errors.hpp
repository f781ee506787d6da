#pragma once

#include <stdexcept>
#include <string>

namespace lacmfer {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor operands have incompatible shapes for the requested operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// A computation produced or encountered a non-finite value.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class EmptyBatchError : public Error {
 public:
  explicit EmptyBatchError(const std::string& msg) : Error(msg) {}
};

/// Index (class label, sample index) out of range.
class IndexError : public Error {
 public:
  explicit IndexError(const std::string& msg) : Error(msg) {}
};

}  // namespace lacmfer
