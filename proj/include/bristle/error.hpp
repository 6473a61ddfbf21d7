#pragma once

#include <stdexcept>
#include <string>

namespace bristle {

// Dimension disagreement between a model and its input.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value outside its documented domain (labels, empty sets, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data (IDX, BRFE, serialized layers).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent experiment or rule configuration detected at setup.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace bristle
