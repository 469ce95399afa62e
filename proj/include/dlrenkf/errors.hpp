#pragma once

#include <stdexcept>
#include <string>

namespace dlrenkf {

// Base class for all failures raised by the filtering library. CLI maps
// ConfigError to exit code 2 and every NumericalError to exit code 3.
struct FilterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : FilterError {
  using FilterError::FilterError;
};

struct NumericalError : FilterError {
  using FilterError::FilterError;
};

// A matrix handed to orthonormalisation does not have full column rank.
struct RankDeficient : NumericalError {
  using NumericalError::NumericalError;
};

// A covariance expected to be symmetric positive definite failed Cholesky.
struct NotSPD : NumericalError {
  using NumericalError::NumericalError;
};

// NaN/Inf encountered in a drift evaluation or a state update.
struct NonFinite : NumericalError {
  using NumericalError::NumericalError;
};

// DEIM interpolation block became numerically singular.
struct SingularInterpolation : NumericalError {
  using NumericalError::NumericalError;
};

// Diffusion field went negative for a parameter outside the admissible set.
struct NegativeDiffusion : NumericalError {
  using NumericalError::NumericalError;
};

// Vessel collapse (A <= 0) or loss of subsonic flow in the blood-flow model.
struct NonPhysical : NumericalError {
  using NumericalError::NumericalError;
};

// A boundary or junction Newton solve failed to converge.
struct NewtonDivergence : NumericalError {
  using NumericalError::NumericalError;
};

struct MismatchedExperiments : FilterError {
  using FilterError::FilterError;
};

}  // namespace dlrenkf
