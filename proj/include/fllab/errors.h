#pragma once

#include <stdexcept>
#include <string>

namespace fllab {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input rejected before any work is done: shape or layout mismatch, label out
// of range, bad parameter value.
class InputError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but too small or empty for the operation.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

// A non-finite value appeared in an intermediate result.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Inconsistent experiment or attack configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File missing, unreadable, truncated or not in the expected container format.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fllab
