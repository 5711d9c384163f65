// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace streamsplat {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (sizes, counts, ranges).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A solver hit degenerate input or failed to produce a usable estimate.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

#define STREAMSPLAT_CHECK(cond, ExceptionType, message)                                            \
    do {                                                                                           \
        if (!(cond)) {                                                                             \
            throw ExceptionType(std::string(message));                                             \
        }                                                                                          \
    } while (false)

} // namespace streamsplat
