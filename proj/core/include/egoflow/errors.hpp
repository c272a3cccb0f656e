#pragma once

#include <stdexcept>
#include <string>

namespace egoflow {

/// Mismatched tensor / matrix dimensions. The message names both shapes.
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Index outside the valid range. The message names the offending entry.
struct index_error : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Geometric problem has no unique solution (e.g. rank-deficient Kabsch support).
struct degeneracy_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad configuration or input file. CLI maps this to exit code 2.
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace egoflow
