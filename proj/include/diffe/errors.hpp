#pragma once

#include <stdexcept>
#include <string>

namespace diffe {

// Error taxonomy shared by the whole library. The CLI maps these onto
// process exit codes (config/data/format -> 2, numeric -> 3, io -> 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// NaN/Inf encountered where only finite values are valid.
struct NumericError : Error {
  using Error::Error;
};

// Out-of-range index (e.g. diffusion stage outside [1,T]).
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration value or unknown config key.
struct ConfigError : Error {
  using Error::Error;
};

// Invalid data content (bad labels, empty input, degenerate class).
struct DataError : Error {
  using Error::Error;
};

// Malformed or truncated on-disk container.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, unwritable path).
struct IoError : Error {
  using Error::Error;
};

}  // namespace diffe
