#pragma once

#include <stdexcept>
#include <string>

namespace dk {

// Error taxonomy. Every throwing path in the library uses one of these so the
// CLI can map failures onto exit codes (validation -> 2, runtime -> 1).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad shapes, bad arguments, malformed inputs, contract violations.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Non-finite values produced by a forward op. Raised eagerly instead of
// letting NaN propagate through a training run.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Filesystem / serialization failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace dk
