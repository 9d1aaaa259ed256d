#pragma once

#include <stdexcept>
#include <string>

namespace msd {

/// Malformed experiment configuration or command line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weight file does not match the binary format or its sidecar.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sampler or estimator produced a non-finite state.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit kernel-guided integration blew up.
class IntegratorInstability : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// DDIM inversion left the finite range.
class DivergedInversion : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace msd
