#pragma once

#include <stdexcept>
#include <string>

namespace uvcgan {

// Common base so callers can catch everything from this library at once.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad hyperparameters, unknown config keys, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor shape mismatch or indivisible spatial dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Bad input values or violated call contracts (empty input, out-of-range step, ...).
struct ValueError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// File system and serialization problems (corrupt blobs, version mismatch, ...).
struct IoError : Error {
    using Error::Error;
};

// Missing or empty dataset directories.
struct DatasetError : IoError {
    using IoError::IoError;
};

}  // namespace uvcgan
