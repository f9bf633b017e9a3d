#pragma once

#include <stdexcept>
#include <string>

namespace dml {

/// Malformed or inconsistent configuration (files, schemas, flag values).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure: singular matrices, nonfinite values, failed decompositions.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Optimizer produced a nonfinite cost.
struct DivergenceError : NumericError {
    using NumericError::NumericError;
};

/// File system or stream failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace dml
