#pragma once

#include <stdexcept>
#include <string>

namespace sglmm {

// Malformed or incomplete run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violating a schema or the family support.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cholesky failure, non-finite objective, divergent sampler and the like.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sglmm
