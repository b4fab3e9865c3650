#pragma once

#include <stdexcept>
#include <string>

namespace phasemotion {

/// Precondition violated by the caller (bad shape, bad range, bad flag).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf. The message names the layer or parameter.
class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be read or written. The message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace phasemotion
