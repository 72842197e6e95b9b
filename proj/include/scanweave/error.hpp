#pragma once

#include <stdexcept>
#include <string>

namespace scanweave {

/// Operand shapes disagree (matrix products, cube pairs, masks vs cubes).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument is outside its documented range.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The input has no usable content, e.g. an all-zero saliency map.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scanweave
