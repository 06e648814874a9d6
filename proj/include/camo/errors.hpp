// Error types shared across the library. The CLI maps ConfigError (and
// subclasses) to exit code 2, everything else derived from std::exception
// to exit code 3.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace camo {

// Mismatched dimensions, empty inputs where a shape contract exists.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Unresolvable ids, invalid hyperparameters, malformed config files.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// A runtime precondition failed (empty split after filtering, output
// already exists without --force, ...).
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

// Input data carries no usable signal (e.g. all samples identical).
struct DegenerateDataError : PreconditionError {
    explicit DegenerateDataError(const std::string& what) : PreconditionError(what) {}
};

// Cholesky factorization hit a non-positive pivot. Carries the pivot index
// so the caller can decide on a regularization policy.
struct NotPdError : std::runtime_error {
    std::size_t pivot;
    explicit NotPdError(std::size_t pivot_index)
        : std::runtime_error("matrix not positive definite at pivot " +
                             std::to_string(pivot_index)),
          pivot(pivot_index) {}
};

// Report assembly found an attack label with only one of the two
// (plain, hfc) variants while the input mixes both.
struct MissingPairError : ConfigError {
    explicit MissingPairError(const std::string& what) : ConfigError(what) {}
};

} // namespace camo
