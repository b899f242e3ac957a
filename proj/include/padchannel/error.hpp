#pragma once

#include <stdexcept>
#include <string>

namespace padchannel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid dims, mismatched operands, or an output geometry that collapses.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's contract (bad pad, label out of range,
/// invalid config value, non-scalar loss, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// PadChannel combined with a non-zero padding mode.
class IncompatiblePaddingError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Unreadable or malformed dataset / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace padchannel
