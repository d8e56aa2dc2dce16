#ifndef CAPGEN_ERROR_H_
#define CAPGEN_ERROR_H_

#include <stdexcept>

namespace capgen {

// Bad input data or a missing artifact (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: divergence, non-finite values (CLI exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (CLI exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace capgen

#endif  // CAPGEN_ERROR_H_
