#pragma once

#include <stdexcept>
#include <string>

namespace pkml {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes (message names both shapes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: a precondition of an operation was not met.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model/physiological parameter values.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Numerical blow-up during integration, training or sampling.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, double when) : Error(msg), when_(when) {}
  explicit DivergenceError(const std::string& msg) : Error(msg), when_(-1.0) {}
  // Time (or epoch index) at which the divergence was detected.
  double when() const { return when_; }

 private:
  double when_;
};

// Bad configuration file or option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures, always with path context in the message.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pkml
