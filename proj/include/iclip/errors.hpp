#pragma once

#include <stdexcept>
#include <string>

namespace iclip {

// Shape or extent disagreement between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf detected at an op boundary, zero-norm rows, diverged losses.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller violated a contract (bad config value, out-of-range index, ...).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A file parsed but its content violates the schema.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File system failures (missing path, unwritable output).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace iclip
