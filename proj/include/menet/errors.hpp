#pragma once

#include <stdexcept>
#include <string>

namespace menet {

/// Shape or argument contract violated by a caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad configuration value (negative weight, invalid ModelConfig, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, unmatched or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, divergence, failed gradient check.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace menet
