#pragma once

#include <stdexcept>
#include <string>

namespace synthgp {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data or violated data invariants.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Factorization failures, non-finite objectives, failed fits.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was asked to run before its upstream artifact exists.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace synthgp
