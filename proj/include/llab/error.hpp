#ifndef LLAB_ERROR_HPP
#define LLAB_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace llab {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or layout mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain argument (negative alpha, fraction outside [0,1], ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (CSV, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (schedule bounds, thresholds, JSON schema).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problem too large for a dense routine.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Representation without variance (constant model outputs).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace llab

#endif  // LLAB_ERROR_HPP
