#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taco {

// Error taxonomy. The CLI maps each class to a distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform to an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid user-facing configuration (bad field, missing file, out-of-range value).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent input data (ragged CSV, schema mismatch, bad labels).
struct DataError : Error {
    using Error::Error;
};

// An allocation request exceeded the configured capacity. Carries the offending
// size so out-of-memory cells can be reported instead of crashing a whole run.
struct CapacityError : Error {
    CapacityError(const std::string& what, std::size_t requested)
        : Error(what), requested_bytes(requested) {}
    std::size_t requested_bytes;
};

struct IoError : Error {
    using Error::Error;
};

// Corrupt or incompatible checkpoint container.
struct CheckpointError : Error {
    using Error::Error;
};

}  // namespace taco
