#pragma once

#include <stdexcept>
#include <string>

namespace gsnr {

// Invalid user configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite value or stalled (CLI exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A statistic is undefined on its input, e.g. a correlation with a constant vector.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace gsnr
