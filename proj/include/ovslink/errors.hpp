#pragma once

#include <stdexcept>
#include <string>

namespace ovslink {

// Malformed or unreadable input. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs that parse fine but disagree with each other (frame sizes,
// instance ids). The CLI maps this to exit code 3.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

}  // namespace ovslink
