#pragma once

#include <stdexcept>
#include <string>

namespace liera {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension contract violations.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf, domain violations, overflow guards.
struct NumericError : Error {
    using Error::Error;
};

// File format and filesystem failures.
struct IoError : Error {
    using Error::Error;
};

// Config schema violations.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace liera
