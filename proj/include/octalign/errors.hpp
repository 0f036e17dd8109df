#pragma once

#include <stdexcept>
#include <string>

namespace octalign {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension_error"; }
};

class OrderingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "ordering_error"; }
};

class NormalizationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "normalization_error"; }
};

class RangeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "range_error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_error"; }
};

class DegenerateError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "degenerate_error"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format_error"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

}  // namespace octalign
