#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rfid {

// Bad configuration or usage (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lookup of an identifier that does not exist (CLI exit code 3).
class NotFoundError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss or parameters during training (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace rfid
