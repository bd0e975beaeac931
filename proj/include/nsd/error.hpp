#pragma once

#include <stdexcept>
#include <string>

namespace nsd {

// Exit-code categories shared by the library and the CLI.
enum class ErrorKind { usage = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string &what) : Error(ErrorKind::usage, what) {}
};

// Malformed files, inconsistent annotations, invalid configs, I/O failures.
struct DataError : Error {
  explicit DataError(const std::string &what) : Error(ErrorKind::data, what) {}
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct ConfigError : DataError {
  using DataError::DataError;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct NumericalError : Error {
  explicit NumericalError(const std::string &what)
      : Error(ErrorKind::numerical, what) {}
};

} // namespace nsd
