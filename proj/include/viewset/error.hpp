#pragma once

#include <stdexcept>
#include <string>

namespace viewset {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Caller violated an operation contract (non-scalar backward, reused tape, ...).
struct ContractError : Error {
    using Error::Error;
};

// Bad user-supplied data (ragged views, label out of range, ...).
struct InputError : Error {
    using Error::Error;
};

// Malformed file contents; message carries the line number where known.
struct ParseError : Error {
    using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Object not in a usable state for the requested call (untrained model, ...).
struct StateError : Error {
    using Error::Error;
};

// A closure required to be deterministic produced two different values.
struct DeterminismError : Error {
    using Error::Error;
};

} // namespace viewset
