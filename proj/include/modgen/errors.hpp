#pragma once

#include <stdexcept>
#include <string>

namespace modgen {

// Error categories map one-to-one onto CLI exit codes: config 2, data 3,
// numerical 4.
// Precondition violations on in-process APIs use std::invalid_argument.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace modgen
