#pragma once

#include <stdexcept>
#include <string>

namespace kinkcert {

// Bad user-supplied configuration (distributions, flags, file contents).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input violates an operation precondition (empty dataset, x == 0, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// A moment matrix required to be invertible is (numerically) singular.
struct SingularError : std::runtime_error {
    explicit SingularError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure that should not happen for valid inputs.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace kinkcert
