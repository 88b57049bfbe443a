#pragma once

#include <stdexcept>
#include <string>

namespace metaqa {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (prediction files, reports).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (benchmark spec, training config, CLI flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class AssemblyError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// NaN losses, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace metaqa
