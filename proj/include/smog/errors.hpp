#pragma once

#include <stdexcept>
#include <string>

namespace smog {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Scalar required, tensor given (backward on a non-scalar loss).
class RankError : public Error {
public:
    using Error::Error;
};

// A row whose norm is too small to normalize. During training this signals
// representation collapse.
class ZeroVectorError : public Error {
public:
    using Error::Error;
};

// Batch statistics undefined (batch norm with fewer than two samples).
class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

// Invalid configuration or network spec. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or truncated file.
class FormatError : public Error {
public:
    using Error::Error;
};

// Too few samples for the requested operation (k-means with M < k,
// InfoNCE with N < 2, probe with one class).
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

}  // namespace smog
