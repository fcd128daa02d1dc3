// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace rofkit {

// Base for every error the toolkit raises. The CLI maps subclasses onto exit
// statuses (see cli.hpp), so new failure modes should derive from one of the
// concrete classes below rather than from Error directly.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid RopeConfig or unsupported option combination.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Vector or tensor dimensions do not line up.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Unreadable or malformed RKD1 container.
class FormatError : public Error {
public:
  using Error::Error;
};

// Well-formed input that violates a data invariant (non-finite values,
// post-rotation dumps, out-of-range indices).
class ValidationError : public Error {
public:
  using Error::Error;
};

// An angle was requested for a zero-length mean vector.
class UndefinedAngleError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

// The file system refused a read or write.
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace rofkit
