#pragma once

#include <stdexcept>
#include <string>

namespace iosda {

// Error taxonomy. The CLI maps each family onto a distinct exit code.

/// Shape or index mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed, empty, or inconsistent input data (files, labels, configs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numeric breakdown during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace iosda
