#pragma once

#include <stdexcept>
#include <string>

namespace fdy {

/// Raised when a configuration cannot describe a valid layer or model.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on incompatible tensor shapes at op boundaries.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or mismatching files (checkpoints, manifests, TSVs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical invariant is violated at run time (NaN loss, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fdy
