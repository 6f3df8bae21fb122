#pragma once

#include <stdexcept>
#include <string>

namespace otloc {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Numerical failure: kernel underflow, degenerate vectors, non-finite values.
struct NumericError : Error {
  using Error::Error;
};

// Bad user configuration (unknown keys, invalid values, missing flags).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or incompatible data / model files.
struct DataError : Error {
  using Error::Error;
};

}  // namespace otloc
