#pragma once

#include <stdexcept>
#include <string>

namespace tidsit {

// Error taxonomy mirrored by the CLI exit codes: config=2, data=3,
// numeric=4, io=5.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Shape/contract violations inside the numerics layer.
class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tidsit
