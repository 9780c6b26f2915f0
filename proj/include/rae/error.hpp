#pragma once

#include <stdexcept>
#include <string>

namespace rae {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or sequence dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: embedding files, corpora, trees, checkpoints, codes.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad or unknown run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rae
