#pragma once

#include <stdexcept>
#include <string>

namespace vpl {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf reached an op boundary, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, plan or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (manifest, checkpoint, image).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A metric that is undefined for the given input (e.g. AUROC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace vpl
