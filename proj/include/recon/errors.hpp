#pragma once

#include <stdexcept>
#include <string>

namespace recon {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration, arguments or budget.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Byte stream or file is malformed, or encoder/decoder state diverged.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Degenerate math (zero quaternion, divergent fit, solver failure).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Requested bytes/frame cannot hold even one anchor per level.
class BudgetError : public ConfigError {
public:
    BudgetError(const std::string& what, std::size_t minimum_bytes)
        : ConfigError(what), minimum_bytes_(minimum_bytes) {}

    std::size_t minimum_bytes() const noexcept { return minimum_bytes_; }

private:
    std::size_t minimum_bytes_;
};

}  // namespace recon
