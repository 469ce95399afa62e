#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dlrenkf/errors.hpp"

namespace dlrenkf::hyper {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexList = std::vector<Eigen::Index>;

// Greedy max-residual point selection (DEIM). q must have linearly
// independent columns, m <= n; returns m distinct row indices. Ties in the
// argmax break towards the lowest index.
IndexList deim_select(const Matrix& q);

// Same recursion, but indices listed in `excluded` never win the argmax.
// Used for column oversampling where the first batch is already fixed.
IndexList deim_select_excluding(const Matrix& q, const IndexList& excluded);

struct CurSelection {
  IndexList row_indices;  // sigma, n entries
  IndexList col_indices;  // varsigma, m entries (three-stage order)
};

// Selection plus the drift evaluations gathered along the way, so callers
// never recompute them.
struct CurOperator {
  CurSelection selection;
  Matrix columns;  // d x m   selected full-height columns
  Matrix cross;    // n x m   rows sigma of the selected columns
  Matrix rows;     // n x P   selected full-width rows
};

using ColumnEval = std::function<Matrix(const IndexList&)>;  // d x |idx|
using RowEval = std::function<Matrix(const IndexList&)>;     // |idx| x P

// Three-stage index selection: R particles from ortho(Y), R rows from the
// orthonormalised selected columns, then R oversampled particles from the
// orthonormalised selected rows. Work: 2R full columns + R full rows of the
// drift, never the full d x P matrix. Returns nullopt when the stochastic
// modes carry no usable directions (caller falls back to full evaluation).
std::optional<CurOperator> select_cur_indices(const Matrix& y_modes,
                                              const ColumnEval& eval_columns,
                                              const RowEval& eval_rows);

struct CurFactors {
  Matrix left;   // d x n
  Matrix right;  // n x P
};

// CUR factors left = C (P_sigma C)^+ and right = selected rows, approximating
// the full matrix as left * right. Pseudoinverse via SVD, singular values
// below 1e-12 sigma_max treated as zero.
CurFactors cur_approximate(const Matrix& columns, const Matrix& cross,
                           const Matrix& rows);

}  // namespace dlrenkf::hyper
