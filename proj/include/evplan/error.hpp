#pragma once

#include <stdexcept>
#include <string>

namespace evplan {

// Every library failure maps onto one of three categories; the CLI turns
// them into exit codes 1 (usage), 2 (data) and 3 (numerical).
enum class ErrorKind { usage, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

// tensor engine
class DimensionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class UnsupportedOpError : public UsageError {
 public:
  using UsageError::UsageError;
};
class EmptyBatchError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class DetachedGraphError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class StateCorruptionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// data handling
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : DataError(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LengthError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

}  // namespace evplan
