#include "dlrenkf/linalg.hpp"

#include <algorithm>
#include <string>

namespace dlrenkf::linalg {

namespace {

QrResult mgs(const Matrix& m, double drop_tol, bool throw_on_deficient) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  QrResult out;
  out.q.resize(rows, cols);
  out.r = Matrix::Zero(cols, cols);
  out.kept.reserve(cols);

  Eigen::Index nq = 0;
  for (Eigen::Index j = 0; j < cols; ++j) {
    Vector v = m.col(j);
    const double col_norm = v.norm();
    Vector coeff = Vector::Zero(cols);
    // two projection sweeps keep Q^T Q = I at machine precision
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (Eigen::Index i = 0; i < nq; ++i) {
        const double c = out.q.col(i).dot(v);
        v -= c * out.q.col(i);
        coeff[i] += c;
      }
    }
    const double res = v.norm();
    // dropped columns keep their projection coefficients so q * r still
    // reproduces their representable part
    for (Eigen::Index i = 0; i < nq; ++i) out.r(i, j) = coeff[i];
    if (res <= drop_tol * col_norm) {
      if (throw_on_deficient)
        throw RankDeficient("orthonormalize: column " + std::to_string(j) +
                            " is numerically dependent");
      continue;  // drop
    }
    out.r(nq, j) = res;
    out.q.col(nq) = v / res;
    out.kept.push_back(j);
    ++nq;
  }
  out.q.conservativeResize(rows, nq);
  // keep only rows of R matching surviving q columns; columns stay aligned
  // with the input so q * r reproduces the kept part of m
  Matrix r_full = out.r;
  out.r = r_full.topRows(nq);
  return out;
}

}  // namespace

QrResult orthonormalize(const Matrix& m, double drop_tol) {
  if (m.cols() > m.rows())
    throw RankDeficient("orthonormalize: more columns than rows");
  return mgs(m, drop_tol, true);
}

QrResult orthonormalize_dropping(const Matrix& m, double drop_tol) {
  return mgs(m, drop_tol, false);
}

TruncatedFactors truncated_svd(const Matrix& m, int rank) {
  const int max_rank = static_cast<int>(std::min(m.rows(), m.cols()));
  if (rank < 1 || rank > max_rank)
    throw ConfigError("truncated_svd: rank out of range");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  TruncatedFactors f;
  f.left_modes = svd.matrixU().leftCols(rank);
  f.singular_values = svd.singularValues().head(rank);
  f.right_modes = svd.matrixV().leftCols(rank);
  // sign convention: first entry of each left mode above 1e-8 is positive
  for (int j = 0; j < rank; ++j) {
    for (Eigen::Index i = 0; i < f.left_modes.rows(); ++i) {
      const double v = f.left_modes(i, j);
      if (std::abs(v) > 1e-8) {
        if (v < 0.0) {
          f.left_modes.col(j) = -f.left_modes.col(j);
          f.right_modes.col(j) = -f.right_modes.col(j);
        }
        break;
      }
    }
  }
  return f;
}

int adaptive_rank(const Vector& singular_values, double theta, int r_min) {
  if (theta <= 0.0) throw ConfigError("adaptive_rank: theta must be > 0");
  if (r_min < 1) throw ConfigError("adaptive_rank: r_min must be >= 1");
  const int n = static_cast<int>(singular_values.size());
  const double budget = theta * theta;
  const int start = std::min(r_min, n);
  for (int r = start; r < n; ++r) {
    double tail = 0.0;
    for (int j = n - 1; j >= r; --j) tail += singular_values[j] * singular_values[j];
    if (tail <= budget) return r;
  }
  return n;
}

Matrix reduced_gain(const Matrix& p_y, const Matrix& h_u, const Matrix& gamma,
                    double dt) {
  Eigen::LLT<Matrix> gamma_llt(gamma);
  if (gamma_llt.info() != Eigen::Success)
    throw NotSPD("reduced_gain: Gamma is not SPD");
  const Matrix inner = gamma + dt * h_u * p_y * h_u.transpose();
  Eigen::LLT<Matrix> llt(inner);
  if (llt.info() != Eigen::Success)
    throw NotSPD("reduced_gain: Gamma + dt H_U P_Y H_U^T is not SPD");
  // K_U^T = inner^{-1} (P_Y H_U^T)^T
  return llt.solve(h_u * p_y.transpose()).transpose();
}

}  // namespace dlrenkf::linalg
