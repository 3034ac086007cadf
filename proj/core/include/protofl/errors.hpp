#pragma once

#include <stdexcept>
#include <string>

namespace protofl {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or layouts that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or overflow detected in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A finite resource (e.g. the prototype pool) ran out.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Malformed input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace protofl
