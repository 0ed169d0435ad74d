// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace crossmo {

/// Base of every exception thrown by the library. The CLI maps the
/// subclasses onto exit-code categories.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class TooShort : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class MappingIncomplete : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ShapeMismatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Container / checkpoint parse failures carry a distinct kind so callers
/// can tell a foreign file from a damaged one.
class ParseError : public IoError {
 public:
  enum class Kind { kMagicMismatch, kVersionMismatch, kTruncated, kMalformed };

  ParseError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace crossmo
