#pragma once

#include <stdexcept>
#include <string>

namespace ckd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape contract violated by an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A config file or config object does not satisfy its schema. The message
/// starts with the dotted path to the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key_path, const std::string& what)
      : Error(key_path + ": " + what), key_path_(key_path) {}

  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

/// Numerical failure (non-finite values, degenerate inputs).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ckd
