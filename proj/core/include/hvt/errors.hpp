#pragma once

#include <stdexcept>
#include <string>

namespace hvt {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Nonconforming tensor or image extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameters or model configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller violated a documented precondition (non-scalar loss, empty record, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Bad user-supplied data: empty datasets, unknown labels, malformed CSV.
class InputError : public Error {
public:
    using Error::Error;
};

/// Non-finite values reached the optimizer.
class NumericError : public Error {
public:
    using Error::Error;
};

// Persistence failures. Each load failure has its own type so callers can tell them apart.
class FormatError : public InputError {
public:
    using InputError::InputError;
};
class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};
class ManifestError : public FormatError {
public:
    using FormatError::FormatError;
};

} // namespace hvt
