#pragma once

#include <stdexcept>
#include <string>

namespace caila {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor dimension / rank mismatch.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid argument value or violated call contract.
struct ValueError : Error {
  using Error::Error;
};

/// Bad or infeasible configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Unknown attribute / object / word.
struct VocabError : Error {
  using Error::Error;
};

/// Filesystem failures (path included in the message).
struct IoError : Error {
  using Error::Error;
};

/// Corrupt or incompatible serialized data.
struct FormatError : Error {
  using Error::Error;
};

/// Training-time failures (divergence, NaN gradients).
struct TrainError : Error {
  using Error::Error;
};

}  // namespace caila
