#pragma once

#include <stdexcept>
#include <string>

namespace hali {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor dimension mismatch. Carries the name of the offending axis so
// callers (and tests) can tell which dimension broke.
class ShapeError : public Error {
public:
    ShapeError(std::string axis, const std::string& message)
        : Error(message), axis_(std::move(axis)) {}
    const std::string& axis() const { return axis_; }

private:
    std::string axis_;
};

// Invalid argument value (bad enum, out-of-range scalar, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Model/run configuration rejected during validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset-level problems: label out of range, count mismatch, bad split.
class DataError : public Error {
public:
    using Error::Error;
};

// Filesystem / stream failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Training aborted (non-finite loss and the like).
class TrainError : public Error {
public:
    using Error::Error;
};

// Checkpoint load failures, one kind per distinguishable cause.
class CheckpointError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, ChecksumMismatch, DigestMismatch };

    CheckpointError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

} // namespace hali
