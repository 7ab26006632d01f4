#pragma once

#include <stdexcept>
#include <string>

namespace misshift {

// Base class for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible matrix shapes while building a computation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API contract violated (non-scalar loss, bad argument, empty input).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Cholesky or conditional-covariance factorization failed.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

// A missingness mechanism could not be calibrated to the requested rate.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg), epoch_(-1) {}
  DivergenceError(const std::string& msg, long epoch)
      : Error(msg + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  long epoch() const { return epoch_; }

 private:
  long epoch_;
};

// Malformed or inconsistent external table.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Bad experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Container / CSV read or write failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace misshift
