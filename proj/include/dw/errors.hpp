#pragma once

#include <stdexcept>
#include <string>

namespace dw {

// Base for every error the library raises on purpose. The CLI maps the
// concrete type to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, bad header values).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// Text format parse failure; the message carries the line or byte offset.
class ParseError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dw
