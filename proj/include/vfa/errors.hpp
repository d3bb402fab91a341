#pragma once

#include <stdexcept>
#include <string>

namespace vfa {

/// Malformed configuration (bad value, unknown key, violated invariant).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// File could not be opened, read, written or parsed.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or a runaway stage during training.
struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Checkpoint, dataset and config disagree on a dimension.
struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vfa
