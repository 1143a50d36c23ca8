#pragma once

#include <stdexcept>
#include <string>

namespace glyphforge {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or image extents that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A numeric argument outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Batch statistics requested from fewer than two values per channel.
class DegenerateBatchError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

/// Violated calling contract (e.g. backward on a non-scalar).
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents; the message carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

/// A checkpoint written under a different configuration.
class IncompatibleError : public Error {
public:
    using Error::Error;
};

}  // namespace glyphforge
