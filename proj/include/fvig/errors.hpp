#pragma once

#include <stdexcept>
#include <string>

namespace fvig {

/// Incompatible tensor shapes for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Index, axis, or count outside its valid range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid model, training, or command configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file contents (images, checkpoints, datasets).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset directory that cannot be turned into a labelled split.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fvig
