#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace amusd {

/// Malformed argument: out-of-vocabulary token, empty prompt, rho outside [0,1], ...
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Rollback target outside [prompt_length, prefix_length].
class InvalidRollback : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The draft/verify handshake was used out of order. Always an engine bug;
/// the run must be aborted.
class ProtocolViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Internal inconsistency of the discrete-event executor.
class SimulatorError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Configuration could not be parsed or validated. `line` is 1-based, 0 when
/// the problem is not tied to a particular line.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace amusd
