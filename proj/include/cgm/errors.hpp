#pragma once

#include <stdexcept>
#include <string>

namespace cgm {

// Contract violation: bad shapes, bad arguments, misuse of an API.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data: CSV, schema hints, checkpoints, configs.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric failure (NaN/Inf reached a hard gate).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cgm
