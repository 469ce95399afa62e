#pragma once

#include <Eigen/Dense>

#include "dlrenkf/errors.hpp"

namespace dlrenkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Augmented-state particle cloud: column p holds (X^(p), theta^(p)).
struct FullEnsemble {
  Matrix states;  // d x P
  Matrix params;  // n_theta x P (zero rows when no parameters are estimated)

  Eigen::Index state_dim() const { return states.rows(); }
  Eigen::Index param_dim() const { return params.rows(); }
  Eigen::Index particle_count() const { return states.cols(); }

  void validate() const;
};

struct SampleStats {
  Vector mean;       // d + n_theta
  Matrix anomalies;  // (d + n_theta) x P, zero row-sums
};

// Mean and zero-mean anomalies of the augmented cloud. The unbiased sample
// covariance is anomalies * anomalies^T / (P - 1) and is never materialised.
SampleStats sample_stats(const FullEnsemble& ens);

}  // namespace dlrenkf
