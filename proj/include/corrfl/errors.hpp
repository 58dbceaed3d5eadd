#pragma once

#include <stdexcept>
#include <string>

namespace corrfl {

// Error classes map to CLI exit codes: config -> 2, data -> 3, runtime -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values or malformed config files.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset problems: missing files, empty streams, insufficient rows.
struct DataError : Error {
    using Error::Error;
};

// Rejected inputs: dimension or length mismatches between tensors.
struct InputError : Error {
    using Error::Error;
};

// Phase-ordering violations in the scenario driver.
struct OrderingError : Error {
    using Error::Error;
};

// Metrics that are undefined for the given operands (IR with p_B=0, PI with IR=0).
struct MetricError : Error {
    using Error::Error;
};

// Filesystem failures while reading or emitting artifacts.
struct IoError : Error {
    using Error::Error;
};

}  // namespace corrfl
