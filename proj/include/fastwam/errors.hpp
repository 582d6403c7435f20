#pragma once

#include <stdexcept>
#include <string>

namespace fastwam {

// Shape or dimension disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value or mismatched component configs.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad caller-supplied data (e.g. non-finite action).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Attention mask with a fully-masked query row.
class InvalidMaskError : public std::runtime_error {
 public:
  explicit InvalidMaskError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / serialization failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fastwam
