#pragma once

#include <stdexcept>
#include <string>

namespace rcs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A numeric operation left its domain (non-finite output, log of a non-positive value, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument. The CLI maps these to usage errors.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read or written, or has the wrong format.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace rcs
