#pragma once

#include <stdexcept>
#include <string>

namespace glimpse {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/size disagreement between operands.
class dim_error : public error {
 public:
  using error::error;
};

// API precondition violated (non-scalar backward target, missing gradient,
// label out of range, ...).
class contract_error : public error {
 public:
  using error::error;
};

// Invalid or inconsistent configuration.
class config_error : public error {
 public:
  using error::error;
};

// Unreadable, unparsable or inconsistent data on disk.
class data_error : public error {
 public:
  using error::error;
};

// Unknown action id or name.
class vocab_error : public data_error {
 public:
  using data_error::data_error;
};

inline std::string shape_str(int rows, int cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace glimpse
