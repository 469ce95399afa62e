#include "dlrenkf/dlr.hpp"

#include <algorithm>
#include <cmath>

#include "dlrenkf/hyperreduction.hpp"
#include "dlrenkf/rng.hpp"

namespace dlrenkf::dlr {

namespace {

using linalg::orthonormalize_dropping;

std::vector<VariableBlock> blocks_of(const std::vector<BlockRank>& layout) {
  std::vector<VariableBlock> blocks;
  blocks.reserve(layout.size());
  for (const auto& b : layout)
    blocks.push_back({b.name, b.row_begin, b.row_end});
  return blocks;
}

// drift matrix, either dense or in CUR-factored form
struct DriftRep {
  bool factored = false;
  Matrix dense;        // d x P
  Matrix left, right;  // d x r, r x P

  Matrix times(const Matrix& m) const {  // F * m
    return factored ? Matrix(left * (right * m)) : Matrix(dense * m);
  }
  Matrix t_times(const Matrix& m) const {  // F^T * m
    return factored ? Matrix(right.transpose() * (left.transpose() * m))
                    : Matrix(dense.transpose() * m);
  }
  Vector mean_column() const {  // E_P[f]
    const double p = factored ? right.cols() : dense.cols();
    return factored ? Vector(left * (right.rowwise().sum() / p))
                    : Vector(dense.rowwise().sum() / p);
  }
  bool finite() const {
    return factored ? (left.allFinite() && right.allFinite())
                    : dense.allFinite();
  }
  void center() {  // subtract the sample mean column
    if (factored) {
      const Vector rm = right.rowwise().mean();
      right.colwise() -= rm;
    } else {
      const Vector fm = dense.rowwise().mean();
      dense.colwise() -= fm;
    }
  }
};

DriftRep evaluate_drift(const DlrEnsemble& dlr, const ForwardModel& model,
                        double t, bool hyper) {
  const Eigen::Index d = dlr.state_dim();
  const Eigen::Index p = dlr.particle_count();
  DriftRep rep;

  if (hyper) {
    auto eval_columns = [&](const hyper::IndexList& idx) {
      Matrix xs(d, static_cast<Eigen::Index>(idx.size()));
      Matrix th(dlr.params.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) {
        xs.col(j) = dlr.mean + dlr.det_modes * dlr.stoch_modes.row(idx[j]).transpose();
        th.col(j) = dlr.params.col(idx[j]);
      }
      return eval_drift(model, t, xs, th);
    };
    auto eval_rows = [&](const hyper::IndexList& rows) {
      auto state_row = [&](Eigen::Index i) -> Eigen::RowVectorXd {
        return (dlr.det_modes.row(i) * dlr.stoch_modes.transpose()).array() +
               dlr.mean[i];
      };
      Matrix out;
      model.drift_rows(t, rows, state_row, dlr.params, out);
      return out;
    };
    const auto op = hyper::select_cur_indices(dlr.stoch_modes, eval_columns,
                                              eval_rows);
    if (op) {
      const auto factors = hyper::cur_approximate(op->columns, op->cross, op->rows);
      rep.factored = true;
      rep.left = factors.left;
      rep.right = factors.right;
      if (!rep.finite()) throw NonFinite("bug_forecast: drift blow-up");
      return rep;
    }
    // degenerate modes: fall through to a full evaluation
  }

  Matrix states = dlr.det_modes * dlr.stoch_modes.transpose();
  states.colwise() += dlr.mean;
  rep.dense.resize(d, p);
  model.drift(t, states, dlr.params, rep.dense);
  if (!rep.finite()) throw NonFinite("bug_forecast: drift blow-up");
  return rep;
}

// E_P-orthonormal basis (column Euclidean norm sqrt(P)) of the column span
Matrix ortho_ep(const Matrix& m) {
  const double sp = std::sqrt(double(m.rows()));
  const Matrix q = orthonormalize_dropping(m / sp).q;
  return sp * q;
}

}  // namespace

void DlrEnsemble::validate() const {
  const Eigen::Index r = total_rank();
  if (stoch_modes.cols() != r)
    throw ConfigError("DlrEnsemble: factor rank mismatch");
  if (!mean.allFinite() || !det_modes.allFinite() || !stoch_modes.allFinite() ||
      !params.allFinite())
    throw NonFinite("DlrEnsemble: non-finite entry");
  if (r > 0) {
    const Matrix gram = det_modes.transpose() * det_modes;
    if ((gram - Matrix::Identity(r, r)).norm() > 1e-10)
      throw NumericalError("DlrEnsemble: det_modes lost orthonormality");
    for (Eigen::Index j = 0; j < r; ++j) {
      const double cn = stoch_modes.col(j).norm();
      if (std::abs(stoch_modes.col(j).mean()) >
          1e-12 * (cn > 0 ? cn : 1.0))
        throw NumericalError("DlrEnsemble: stoch_modes lost zero mean");
    }
  }
}

DlrEnsemble from_identical(const Vector& mean, const Matrix& params,
                           const std::vector<VariableBlock>& blocks, int rank) {
  DlrEnsemble out;
  out.mean = mean;
  out.params = params;
  const Eigen::Index d = mean.size();
  const Eigen::Index p = params.cols();
  int total = 0;
  for (const auto& b : blocks) {
    const int r = std::min<int>(rank, static_cast<int>(b.rows()));
    out.layout.push_back({b.name, b.row_begin, b.row_end, r});
    total += r;
  }
  out.det_modes = Matrix::Zero(d, total);
  out.stoch_modes = Matrix::Zero(p, total);
  int col = 0;
  for (const auto& b : out.layout) {
    for (int j = 0; j < b.rank; ++j) out.det_modes(b.row_begin + j, col + j) = 1.0;
    col += b.rank;
  }
  return out;
}

DlrEnsemble from_ensemble(const FullEnsemble& ens,
                          const std::vector<VariableBlock>& blocks, int rank) {
  const auto stats = sample_stats(ens);
  const Eigen::Index d = ens.state_dim();
  const Eigen::Index p = ens.particle_count();

  DlrEnsemble out;
  out.mean = stats.mean.head(d);
  out.params = ens.params;

  std::vector<Matrix> us, ys;
  int total = 0;
  for (const auto& b : blocks) {
    const Matrix anom = stats.anomalies.middleRows(b.row_begin, b.rows());
    const int r = std::min<int>({rank, static_cast<int>(b.rows()),
                                 static_cast<int>(p)});
    const auto f = linalg::truncated_svd(anom, r);
    us.push_back(f.left_modes);
    ys.push_back(f.right_modes * f.singular_values.asDiagonal());
    out.layout.push_back({b.name, b.row_begin, b.row_end, r});
    total += r;
  }
  out.det_modes = Matrix::Zero(d, total);
  out.stoch_modes = Matrix::Zero(p, total);
  int col = 0;
  for (std::size_t i = 0; i < us.size(); ++i) {
    out.det_modes.block(out.layout[i].row_begin, col, out.layout[i].rows(),
                        out.layout[i].rank) = us[i];
    out.stoch_modes.middleCols(col, out.layout[i].rank) = ys[i];
    col += out.layout[i].rank;
  }
  return out;
}

FullEnsemble reconstruct(const DlrEnsemble& dlr) {
  FullEnsemble out;
  out.states = dlr.det_modes * dlr.stoch_modes.transpose();
  out.states.colwise() += dlr.mean;
  out.params = dlr.params;
  return out;
}

TruncationResult truncate(const Matrix& u_bar, const Matrix& s_tilde,
                          const Matrix& y_bar,
                          const std::vector<VariableBlock>& blocks,
                          const RankPolicy& policy,
                          const std::vector<int>& prev_ranks) {
  const Eigen::Index d = u_bar.rows();
  const Eigen::Index p = y_bar.rows();

  struct BlockOut {
    Matrix u, y;
    double discarded = 0.0;
  };
  std::vector<BlockOut> outs(blocks.size());
  int total = 0;

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const Matrix ub = u_bar.middleRows(b.row_begin, b.rows());
    const auto qr = orthonormalize_dropping(ub, 1e-13);
    if (qr.q.cols() == 0) {
      outs[bi].u.resize(b.rows(), 0);
      outs[bi].y.resize(p, 0);
      continue;
    }
    const Matrix coeff = qr.r * s_tilde;  // m_b x m_Y
    Eigen::JacobiSVD<Matrix> svd(coeff,
                                 Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const int avail = static_cast<int>(sv.size());

    int keep;
    if (policy.mode == RankPolicy::Mode::fixed) {
      keep = std::min(policy.fixed_rank, avail);
    } else {
      keep = std::min(linalg::adaptive_rank(sv, policy.threshold, policy.min_rank),
                      avail);
      const int growth_cap =
          std::max(2 * (bi < prev_ranks.size() ? prev_ranks[bi] : avail),
                   policy.min_rank);
      keep = std::min(keep, growth_cap);
    }

    double discarded = 0.0;
    for (int j = keep; j < avail; ++j) discarded += sv[j] * sv[j];
    outs[bi].discarded = discarded;
    outs[bi].u = qr.q * svd.matrixU().leftCols(keep);
    outs[bi].y = y_bar * svd.matrixV().leftCols(keep) *
                 sv.head(keep).asDiagonal();
  }

  TruncationResult res;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const int r = static_cast<int>(outs[bi].u.cols());
    res.layout.push_back({blocks[bi].name, blocks[bi].row_begin,
                          blocks[bi].row_end, r});
    res.discarded_energy.push_back(outs[bi].discarded);
    total += r;
  }
  res.det_modes = Matrix::Zero(d, total);
  res.stoch_modes = Matrix::Zero(p, total);
  int col = 0;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const int r = res.layout[bi].rank;
    res.det_modes.block(blocks[bi].row_begin, col, blocks[bi].rows(), r) =
        outs[bi].u;
    res.stoch_modes.middleCols(col, r) = outs[bi].y;
    col += r;
  }
  return res;
}

DlrEnsemble bug_forecast(const DlrEnsemble& dlr, const ForwardModel& model,
                         double t, double dt, const BugOptions& opts,
                         RankRecord* record) {
  if (!(dt > 0.0)) throw ConfigError("bug_forecast: dt must be positive");
  const Eigen::Index d = dlr.state_dim();
  const Eigen::Index p = dlr.particle_count();
  const Eigen::Index r = dlr.total_rank();

  DriftRep f = evaluate_drift(dlr, model, t, opts.hyper);

  // Degenerate start (all particles identical): the K step sees no anomaly
  // directions, so re-seed the deterministic modes from the dominant
  // directions of the first drift anomaly before integrating.
  Matrix det = dlr.det_modes;
  if (r > 0 && dlr.stoch_modes.norm() == 0.0 && !f.factored) {
    Matrix fstar = f.dense;
    fstar.colwise() -= Vector(f.dense.rowwise().mean());
    if (fstar.norm() > 0.0) {
      Eigen::Index col = 0;
      for (const auto& b : dlr.layout) {
        const Matrix fb = fstar.middleRows(b.row_begin, b.rows());
        Matrix seed(b.rows(), 0);
        if (fb.norm() > 0.0) {
          const int lead = std::min<int>(
              b.rank, static_cast<int>(std::min(fb.rows(), fb.cols())));
          seed = linalg::truncated_svd(fb, lead).left_modes;
        }
        Matrix padded(b.rows(), seed.cols() + b.rank);
        padded << seed, det.block(b.row_begin, col, b.rows(), b.rank);
        const Matrix q = orthonormalize_dropping(padded).q;
        det.block(b.row_begin, col, b.rows(), b.rank) = q.leftCols(b.rank);
        col += b.rank;
      }
    }
  }

  Matrix z, v;
  Vector mean_shift = Vector::Zero(d);
  if (opts.mean_mode == MeanMode::augmented) {
    z.resize(p, r + 1);
    z.col(0).setOnes();
    z.rightCols(r) = dlr.stoch_modes;
    v.resize(d, r + 1);
    v.col(0) = dlr.mean;
    v.rightCols(r) = det;
  } else {
    // mean advanced separately, BUG applied to the zero-mean factors only
    mean_shift = dt * f.mean_column();
    f.center();
    z = dlr.stoch_modes;
    v = det;
  }

  // K(t1) = V + dt E_P[f Z], L(t1) = Z + dt f^T V; the augmented bases only
  // need the spans, so the increments enter the orthonormalisation directly
  const Matrix k_inc = f.times(z) / double(p);
  const Matrix l_inc = f.t_times(v);

  Matrix pre_u(d, v.cols() + k_inc.cols());
  pre_u << v, k_inc;
  const Matrix u_bar = orthonormalize_dropping(pre_u).q;

  Matrix pre_y(p, z.cols() + l_inc.cols());
  pre_y << z, l_inc;
  Matrix y_bar = ortho_ep(pre_y);
  if (opts.mean_mode == MeanMode::augmented && y_bar.cols() > 0)
    y_bar.col(0).setOnes();  // constant direction is exact by construction

  // Galerkin coefficient update S(t1) = S(t0) + dt Ubar^T E_P[f Ybar]
  Matrix s = (u_bar.transpose() * v) * (z.transpose() * y_bar) / double(p);
  s += (dt / double(p)) * (u_bar.transpose() * f.times(y_bar));

  Vector new_mean;
  Matrix s_tilde = s;
  if (opts.mean_mode == MeanMode::augmented) {
    new_mean = u_bar * s.col(0);
    s_tilde.col(0).setZero();
  } else {
    new_mean = dlr.mean + mean_shift;
  }

  std::vector<int> prev_ranks;
  for (const auto& b : dlr.layout) prev_ranks.push_back(b.rank);
  auto trunc = truncate(u_bar, s_tilde, y_bar, blocks_of(dlr.layout),
                        opts.policy, prev_ranks);

  DlrEnsemble out;
  out.mean = new_mean;
  out.det_modes = std::move(trunc.det_modes);
  out.stoch_modes = std::move(trunc.stoch_modes);
  out.layout = std::move(trunc.layout);
  out.params = dlr.params;
  if (record) {
    record->block_ranks.clear();
    for (const auto& b : out.layout) record->block_ranks.push_back(b.rank);
    record->discarded_energy = trunc.discarded_energy;
  }
  if (!out.mean.allFinite() || !out.stoch_modes.allFinite())
    throw NonFinite("bug_forecast: non-finite state after update");
  return out;
}

DlrEnsemble dlr_analyze_discrete(const DlrEnsemble& dlr,
                                 const LinearOperator& h,
                                 const NoiseCovariance& gamma_t,
                                 FilterVariant variant, const Vector& y,
                                 const Matrix& xi) {
  const Eigen::Index p = dlr.particle_count();
  const Eigen::Index r = dlr.total_rank();
  const Eigen::Index k = gamma_t.dim();
  const int kappa = kappa_of(variant);
  const int eta = eta_of(variant);

  const Matrix h_u = h.apply(dlr.det_modes);                          // k x R
  const Matrix p_y = dlr.stoch_modes.transpose() * dlr.stoch_modes / double(p - 1);

  // reduced gain K_U = P_Y H_U^T (Gamma_t + H_U P_Y H_U^T)^{-1}; for large k
  // the inverse is pushed through to an R x R system
  Matrix k_u(r, k);
  Matrix k_theta;
  const bool small_k = k <= std::max<Eigen::Index>(2 * r, 32);
  const Matrix c_ty = dlr.params.rows() > 0
      ? Matrix((dlr.params.colwise() - Vector(dlr.params.rowwise().mean())) *
               dlr.stoch_modes / double(p - 1))
      : Matrix(0, r);
  if (small_k) {
    const Matrix g = gamma_t.to_dense() + h_u * p_y * h_u.transpose();
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success)
      throw NotSPD("dlr_analyze: innovation covariance not SPD");
    k_u = llt.solve(h_u * p_y).transpose();
    if (c_ty.rows() > 0)
      k_theta = llt.solve(h_u * c_ty.transpose()).transpose();
  } else {
    const Matrix gi_h = gamma_t.solve(h_u);           // k x R
    const Matrix m = h_u.transpose() * gi_h;          // R x R
    Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(r, r) + p_y * m);
    k_u = lu.solve(p_y * gi_h.transpose());
    if (c_ty.rows() > 0)
      k_theta = c_ty * (gi_h.transpose() - m * k_u);
  }

  DlrEnsemble out = dlr;

  // mean acquires the full innovation; modes see only anomalies
  Vector xi_mean = Vector::Zero(k);
  if (kappa == 1 && eta == 1) xi_mean = xi.rowwise().mean();
  Vector inno_mean = y - h.apply(Vector(dlr.mean));
  if (kappa == 1 && eta == 1)
    inno_mean -= gamma_t.sqrt_apply(Matrix(xi_mean)).col(0);
  out.mean += dlr.det_modes * (k_u * inno_mean);

  Matrix hy = h_u * dlr.stoch_modes.transpose();  // k x P
  Matrix mode_rhs = (-0.5 * (1.0 + kappa)) * hy;
  if (kappa == 1 && eta == 1) {
    Matrix xi_star = xi;
    xi_star.colwise() -= xi_mean;
    mode_rhs -= gamma_t.sqrt_apply(xi_star);
  }
  out.stoch_modes += (k_u * mode_rhs).transpose();

  if (dlr.params.rows() > 0) {
    const Vector hm = h.apply(Vector(dlr.mean));
    const double mean_coeff = -0.5 * (1.0 + kappa) - eta * 0.5 * (1.0 - kappa);
    Matrix inno = (-0.5 * (1.0 + kappa)) * hy;
    inno.colwise() += y + mean_coeff * hm;
    if (kappa == 1 && eta == 1) inno -= gamma_t.sqrt_apply(xi);
    out.params += k_theta * inno;
  }

  if (!out.mean.allFinite() || !out.stoch_modes.allFinite() ||
      !out.params.allFinite())
    throw NonFinite("dlr_analyze: non-finite state after update");
  return out;
}

DlrEnsemble dlr_analyze(const DlrEnsemble& dlr, const ObservationModel& obs,
                        FilterVariant variant, const Vector& dz, double dt,
                        const Matrix& xi) {
  if (!(dt > 0.0)) throw ConfigError("dlr_analyze: dt must be positive");
  const Vector y = dz / dt;
  return dlr_analyze_discrete(dlr, obs.h, obs.gamma.scaled(1.0 / dt), variant,
                              y, xi);
}

DlrEnsemble dlr_step(const DlrEnsemble& dlr, const ForwardModel& model,
                     const ObservationModel& obs, FilterVariant variant,
                     const Vector& dz, double t, double dt,
                     const BugOptions& opts, std::uint64_t seed,
                     std::uint64_t step_index, RankRecord* record) {
  const DlrEnsemble fc = bug_forecast(dlr, model, t, dt, opts, record);
  const Matrix xi = draw_analysis_noise(seed, step_index, obs.gamma.dim(),
                                        dlr.particle_count(), variant);
  return dlr_analyze(fc, obs, variant, dz, dt, xi);
}

}  // namespace dlrenkf::dlr
