#pragma once

#include <stdexcept>
#include <string>

namespace pfsgd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or index ranges of the arguments do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A coefficient or a recursion produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Every particle received zero likelihood in a Bayesian update.
class DegenerateUpdateError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters, missing callbacks, unreadable config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace pfsgd
