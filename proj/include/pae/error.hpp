#pragma once

#include <stdexcept>
#include <string>

namespace pae {

// Error taxonomy shared by all modules. Callers catch by category;
// messages carry the offending value or resource name.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad shapes, out-of-range settings, unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed files (bad magic, truncation, version mismatch).
struct FormatError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// A required external resource (encoder weights, cache file) is missing.
struct BackendError : Error {
    using Error::Error;
};

// Violated internal invariant; indicates a bug, not user error.
struct InternalError : Error {
    using Error::Error;
};

}  // namespace pae
