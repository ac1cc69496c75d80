#pragma once

#include <stdexcept>
#include <string>

namespace fedlips {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter-block geometry does not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace fedlips
