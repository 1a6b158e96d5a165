#pragma once

#include <stdexcept>
#include <string>

namespace sponge {

// Root of every error thrown by the library. Subclasses map onto the CLI exit
// codes (config / data / numeric) in tools/.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A numeric argument outside the operation's domain (negative variance,
// empty dataset, zero worst-case energy, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong state, e.g. backward without a recorded
// forward pass.
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent files (model headers, blobs, IDX, CSV).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: profile/model mismatch, missing paths, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A defense that cannot be applied to the given model (no conv layers).
class InapplicableError : public Error {
 public:
  using Error::Error;
};

}  // namespace sponge
