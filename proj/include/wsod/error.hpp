#pragma once

#include <stdexcept>
#include <string>

namespace wsod {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An image has no seed boxes, so no pseudo supervision can be derived.
class NoSupervisionError : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became non-finite during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace wsod
