#pragma once

#include <stdexcept>
#include <string>

namespace windadj {

/// Bad or inconsistent configuration (unknown keys, out-of-range values,
/// mutually exclusive options).  CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or invalid input data (unreadable files, schema violations,
/// negative speeds, mismatched geometries).  CLI maps this to exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (non-finite values, factorization failure after the
/// jitter ladder, non-causal AR fits).  CLI maps this to exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace windadj
