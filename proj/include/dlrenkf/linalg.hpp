#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dlrenkf/errors.hpp"

namespace dlrenkf::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Rank-R factorisation M ~ left_modes * diag(singular_values) * right_modes^T.
struct TruncatedFactors {
  Matrix left_modes;       // d x R, orthonormal columns
  Vector singular_values;  // length R, nonincreasing, >= 0
  Matrix right_modes;      // n x R, orthonormal columns

  Matrix reconstruct() const {
    return left_modes * singular_values.asDiagonal() * right_modes.transpose();
  }
};

struct RankPolicy {
  enum class Mode { fixed, adaptive };
  Mode mode = Mode::fixed;
  int fixed_rank = 1;
  double threshold = 0.0;  // adaptive: discarded energy bound theta^2
  int min_rank = 1;

  static RankPolicy fixed(int r) {
    RankPolicy p;
    p.mode = Mode::fixed;
    p.fixed_rank = r;
    if (r < 1) throw ConfigError("RankPolicy: fixed rank must be >= 1");
    return p;
  }
  static RankPolicy adaptive(double theta, int r_min) {
    RankPolicy p;
    p.mode = Mode::adaptive;
    p.threshold = theta;
    p.min_rank = r_min;
    if (theta <= 0.0) throw ConfigError("RankPolicy: adaptive threshold must be > 0");
    if (r_min < 1) throw ConfigError("RankPolicy: min rank must be >= 1");
    return p;
  }
};

struct QrResult {
  Matrix q;         // orthonormal columns
  Matrix r;         // upper triangular (rows of dropped columns removed)
  std::vector<Eigen::Index> kept;  // indices of input columns kept in q
};

// Modified Gram-Schmidt with one reorthogonalisation pass. The diagonal of R
// is nonnegative by construction (entries are column norms). A column whose
// residual norm falls below drop_tol times its original norm counts as
// dependent: orthonormalize throws RankDeficient, orthonormalize_dropping
// removes it and records the survivor indices.
QrResult orthonormalize(const Matrix& m, double drop_tol = 1e-14);
QrResult orthonormalize_dropping(const Matrix& m, double drop_tol = 1e-14);

// Best rank-R approximation via a deterministic dense SVD. Columns of
// left_modes are sign-fixed so their first entry larger than 1e-8 in
// magnitude is positive.
TruncatedFactors truncated_svd(const Matrix& m, int rank);

// Smallest R >= r_min whose discarded tail energy sum_{j>R} sigma_j^2 stays
// below theta^2; the full length if no smaller rank qualifies.
int adaptive_rank(const Vector& singular_values, double theta, int r_min);

// K_U solving K_U (Gamma + dt H_U P_Y H_U^T) = P_Y H_U^T. Gamma must be SPD.
Matrix reduced_gain(const Matrix& p_y, const Matrix& h_u, const Matrix& gamma,
                    double dt);

}  // namespace dlrenkf::linalg
