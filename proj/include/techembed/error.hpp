#pragma once

#include <stdexcept>
#include <string>

namespace techembed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file (JSONL line, qrels line, binary container).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Tensor or vector shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training (non-finite loss or gradient, divergence).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace techembed
