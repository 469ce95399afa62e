#include "dlrenkf/forward_model.hpp"

namespace dlrenkf {

void ForwardModel::drift_rows(double t, const std::vector<Eigen::Index>& rows,
                              const StateRowFn& state_row, const Matrix& params,
                              Matrix& out) const {
  // generic fallback: assemble the full ensemble and slice
  const Eigen::Index d = state_dim();
  Matrix states(d, params.cols());
  for (Eigen::Index i = 0; i < d; ++i) states.row(i) = state_row(i);
  Matrix full(d, params.cols());
  drift(t, states, params, full);
  out.resize(static_cast<Eigen::Index>(rows.size()), params.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = full.row(rows[r]);
}

}  // namespace dlrenkf
