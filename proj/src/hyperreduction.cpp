#include "dlrenkf/hyperreduction.hpp"

#include <algorithm>
#include <string>

#include "dlrenkf/linalg.hpp"

namespace dlrenkf::hyper {

namespace {

Eigen::Index masked_argmax(const Vector& r, const std::vector<bool>& masked) {
  Eigen::Index best = -1;
  double best_val = -1.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (masked[i]) continue;
    const double v = std::abs(r[i]);
    if (v > best_val) {  // strict: ties keep the lowest index
      best_val = v;
      best = i;
    }
  }
  if (best < 0 || best_val == 0.0)
    throw SingularInterpolation("deim_select: residual vanished everywhere");
  return best;
}

IndexList deim_impl(const Matrix& q, const IndexList& excluded) {
  const Eigen::Index n = q.rows();
  const Eigen::Index m = q.cols();
  if (m > n) throw ConfigError("deim_select: more columns than rows");
  std::vector<bool> masked(n, false);
  for (auto i : excluded) masked[i] = true;

  IndexList p;
  p.reserve(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector r = q.col(j);
    if (j > 0) {
      Matrix block(j, j);
      Vector rhs(j);
      for (Eigen::Index i = 0; i < j; ++i) {
        block.row(i) = q.row(p[i]).head(j);
        rhs[i] = q(p[i], j);
      }
      Eigen::PartialPivLU<Matrix> lu(block);
      const Vector diag = lu.matrixLU().diagonal().cwiseAbs();
      if (diag.minCoeff() < 1e-14 * diag.maxCoeff())
        throw SingularInterpolation(
            "deim_select: interpolation block singular at step " +
            std::to_string(j));
      r -= q.leftCols(j) * lu.solve(rhs);
    }
    const Eigen::Index idx = masked_argmax(r, masked);
    p.push_back(idx);
    masked[idx] = true;  // guarantees distinct output
  }
  return p;
}

// orthonormal basis of the column span, dead directions dropped
Matrix span_basis(const Matrix& m) {
  return linalg::orthonormalize_dropping(m, 1e-12).q;
}

}  // namespace

IndexList deim_select(const Matrix& q) { return deim_impl(q, {}); }

IndexList deim_select_excluding(const Matrix& q, const IndexList& excluded) {
  return deim_impl(q, excluded);
}

CurFactors cur_approximate(const Matrix& columns, const Matrix& cross,
                           const Matrix& rows) {
  if (columns.cols() != cross.cols() || cross.rows() != rows.rows())
    throw ConfigError("cur_approximate: inconsistent dimensions");
  Eigen::JacobiSVD<Matrix> svd(cross,
                               Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  const double cut = sv.size() > 0 ? 1e-12 * sv[0] : 0.0;
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) inv[i] = 1.0 / sv[i];
  // pinv(cross) = V inv U^T, so left = C V inv U^T
  CurFactors out;
  out.left = columns * svd.matrixV() * inv.asDiagonal() *
             svd.matrixU().transpose();
  out.right = rows;
  return out;
}

std::optional<CurOperator> select_cur_indices(const Matrix& y_modes,
                                              const ColumnEval& eval_columns,
                                              const RowEval& eval_rows) {
  const Matrix y_basis = span_basis(y_modes);
  if (y_basis.cols() == 0) return std::nullopt;

  CurOperator op;
  // stage 1: R particles from the stochastic modes
  const IndexList cols1 = deim_select(y_basis);
  const Matrix c1 = eval_columns(cols1);

  // stage 2: R rows from the left basis of the selected columns
  const Matrix c1_basis = span_basis(c1);
  if (c1_basis.cols() == 0) return std::nullopt;  // drift carries no signal
  op.selection.row_indices = deim_select(c1_basis);
  op.rows = eval_rows(op.selection.row_indices);

  // stage 3: oversample additional particles from the selected rows
  IndexList cols2;
  {
    Matrix basis = span_basis(op.rows.transpose());  // P x r
    const Eigen::Index room =
        y_modes.rows() - static_cast<Eigen::Index>(cols1.size());
    if (basis.cols() > room) basis = basis.leftCols(room);
    if (basis.cols() > 0) cols2 = deim_select_excluding(basis, cols1);
  }
  const Matrix c2 = cols2.empty() ? Matrix(c1.rows(), 0) : eval_columns(cols2);

  op.selection.col_indices = cols1;
  op.selection.col_indices.insert(op.selection.col_indices.end(), cols2.begin(),
                                  cols2.end());
  op.columns.resize(c1.rows(), c1.cols() + c2.cols());
  op.columns << c1, c2;
  op.cross.resize(op.rows.rows(), op.selection.col_indices.size());
  for (std::size_t j = 0; j < op.selection.col_indices.size(); ++j)
    op.cross.col(j) = op.rows.col(op.selection.col_indices[j]);
  return op;
}

}  // namespace dlrenkf::hyper
