#pragma once

#include <stdexcept>
#include <string>

namespace spmim {

// Base of every error the library raises. The CLI maps subclasses to exit
// codes, so keep the hierarchy flat and meaningful.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class GeometryError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };

// Checkpoint / image file problems.
class FormatError : public DataError { using DataError::DataError; };
class CorruptionError : public DataError { using DataError::DataError; };
class VersionError : public DataError { using DataError::DataError; };

// NaN/Inf appeared in a forward value, a loss or a gradient.
class NumericalError : public Error { using Error::Error; };

}  // namespace spmim
