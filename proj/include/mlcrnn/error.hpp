#pragma once

#include <stdexcept>
#include <string>

namespace mlcrnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or channel counts that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A forward cache or argmax record used out of sequence.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (configs, manifests, vector files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File system failures and unreadable or invalid data files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Inputs that leave nothing to compute, e.g. a label map with no valid pixel.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Optimizer failures such as non-finite gradients.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlcrnn
