#pragma once

#include <stdexcept>
#include <string>

namespace gaaf {

/// Root of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad command-line usage or configuration (unknown key, malformed flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Problems with input data: missing files, malformed containers, empty masks.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite loss during training, heatmap with no peak.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Tensor or volume shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A point was used against a grid it does not belong to.
class FrameMismatchError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public DataError {
 public:
  using DataError::DataError;
};

class NoPeakError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace gaaf
