#include "dlrenkf/enkf.hpp"

#include <string>

#include "dlrenkf/rng.hpp"

namespace dlrenkf {

FilterVariant variant_from_string(const std::string& name) {
  if (name == "venkf") return FilterVariant::venkf;
  if (name == "denkf") return FilterVariant::denkf;
  if (name == "senkf") return FilterVariant::senkf;
  throw ConfigError("unknown filter variant: " + name);
}

std::string to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::venkf: return "venkf";
    case FilterVariant::denkf: return "denkf";
    default: return "senkf";
  }
}

FullEnsemble forecast(const FullEnsemble& ens, const ForwardModel& model,
                      double t, double dt) {
  if (!(dt > 0.0)) throw ConfigError("forecast: dt must be positive");
  Matrix f(ens.states.rows(), ens.states.cols());
  model.drift(t, ens.states, ens.params, f);
  if (!f.allFinite())
    throw NonFinite("forecast: drift returned NaN/Inf at t = " +
                    std::to_string(t));
  FullEnsemble out;
  out.states = ens.states + dt * f;
  out.params = ens.params;
  return out;
}

GainBlocks kalman_gain(const Matrix& anomalies, Eigen::Index state_dim,
                       const ObservationModel& obs, double dt) {
  if (!(dt > 0.0)) throw ConfigError("kalman_gain: dt must be positive");
  const Eigen::Index p = anomalies.cols();
  const double c = 1.0 / double(p - 1);
  const Matrix b = obs.h.apply(Matrix(anomalies.topRows(state_dim)));  // k x P
  const Matrix g = obs.gamma.to_dense() + (dt * c) * (b * b.transpose());
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success)
    throw NotSPD("kalman_gain: innovation covariance not SPD");
  // K^T = G^{-1} B A^T / (P-1)
  const Matrix kt = llt.solve(c * b * anomalies.transpose());
  GainBlocks out;
  out.k_xx = kt.leftCols(state_dim).transpose();
  out.k_theta = kt.rightCols(anomalies.rows() - state_dim).transpose();
  return out;
}

namespace {

// W = (Gamma_tilde + c B B^T)^{-1} Rhs without forming the k x k matrix when
// k is large (Woodbury with a P x P inner solve).
Matrix innovation_solve(const NoiseCovariance& gamma_tilde, const Matrix& b,
                        double c, const Matrix& rhs) {
  const Eigen::Index k = b.rows();
  const Eigen::Index p = b.cols();
  if (k <= p) {
    const Matrix g = gamma_tilde.to_dense() + c * (b * b.transpose());
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success)
      throw NotSPD("analyze: innovation covariance not SPD");
    return llt.solve(rhs);
  }
  const Matrix gi_b = gamma_tilde.solve(b);                 // k x P
  Matrix inner = b.transpose() * gi_b;                      // P x P
  inner += Matrix::Identity(p, p) / c;
  Eigen::LLT<Matrix> llt(inner);
  if (llt.info() != Eigen::Success)
    throw NotSPD("analyze: Woodbury inner matrix not SPD");
  const Matrix gi_rhs = gamma_tilde.solve(rhs);
  return gi_rhs - gi_b * llt.solve(b.transpose() * gi_rhs);
}

}  // namespace

FullEnsemble analyze_discrete(const FullEnsemble& ens_f,
                              const LinearOperator& h,
                              const NoiseCovariance& gamma_tilde,
                              FilterVariant variant, const Vector& y,
                              const Matrix& xi) {
  const Eigen::Index d = ens_f.state_dim();
  const Eigen::Index p = ens_f.particle_count();
  const int kappa = kappa_of(variant);
  const int eta = eta_of(variant);
  const double c = 1.0 / double(p - 1);

  const SampleStats stats = sample_stats(ens_f);
  const Matrix b = h.apply(Matrix(stats.anomalies.topRows(d)));  // k x P
  const Vector hm = h.apply(Vector(stats.mean.head(d)));

  // innovation per particle: y - (1+kappa)/2 H X - eta kappa G^{1/2} xi
  //                            - eta (1-kappa)/2 H m
  Matrix inno = (-0.5 * (1.0 + kappa)) * b;
  const double mean_coeff =
      -0.5 * (1.0 + kappa) - eta * 0.5 * (1.0 - kappa);
  inno.colwise() += y + mean_coeff * hm;
  if (eta == 1 && kappa == 1) inno -= gamma_tilde.sqrt_apply(xi);

  const Matrix w = innovation_solve(gamma_tilde, b, c, inno);
  const Matrix coeff = c * (b.transpose() * w);  // P x P

  FullEnsemble out;
  out.states = ens_f.states + stats.anomalies.topRows(d) * coeff;
  out.params = ens_f.params;
  if (ens_f.param_dim() > 0)
    out.params += stats.anomalies.bottomRows(ens_f.param_dim()) * coeff;
  out.validate();
  return out;
}

FullEnsemble analyze(const FullEnsemble& ens_f, const ObservationModel& obs,
                     FilterVariant variant, const Vector& dz, double dt,
                     const Matrix& xi) {
  if (!(dt > 0.0)) throw ConfigError("analyze: dt must be positive");
  const Vector y = dz / dt;
  return analyze_discrete(ens_f, obs.h, obs.gamma.scaled(1.0 / dt), variant, y,
                          xi);
}

Matrix draw_analysis_noise(std::uint64_t seed, std::uint64_t step_index,
                           Eigen::Index k, Eigen::Index particles,
                           FilterVariant variant) {
  if (kappa_of(variant) == 0) return Matrix::Zero(k, particles);
  Matrix xi(k, particles);
  for (Eigen::Index p = 0; p < particles; ++p) {
    NoiseStream stream(seed, NoiseDomain::analysis_perturb, step_index,
                       static_cast<std::uint64_t>(p));
    xi.col(p) = stream.normal_vector(k);
  }
  return xi;
}

FullEnsemble step(const FullEnsemble& ens, const ForwardModel& model,
                  const ObservationModel& obs, FilterVariant variant,
                  const Vector& dz, double t, double dt, std::uint64_t seed,
                  std::uint64_t step_index) {
  const FullEnsemble fc = forecast(ens, model, t, dt);
  const Matrix xi = draw_analysis_noise(seed, step_index, obs.gamma.dim(),
                                        ens.particle_count(), variant);
  return analyze(fc, obs, variant, dz, dt, xi);
}

double semi_implicit_equivalence_check(const FullEnsemble& ens_f,
                                       const ObservationModel& obs, int kappa,
                                       const Vector& dz, double dt,
                                       const Matrix& xi) {
  const Eigen::Index d = ens_f.state_dim();
  const Eigen::Index n = ens_f.param_dim();
  const Eigen::Index p = ens_f.particle_count();
  const double c = 1.0 / double(p - 1);

  const SampleStats stats = sample_stats(ens_f);
  const Matrix p_hat = c * stats.anomalies * stats.anomalies.transpose();
  Matrix hbar = Matrix::Zero(obs.h.rows(), d + n);
  hbar.leftCols(d) = obs.h.to_dense();
  const Matrix gamma = obs.gamma.to_dense();
  const Matrix gamma_inv_h = gamma.llt().solve(hbar);
  const Matrix system =
      Matrix::Identity(d + n, d + n) + dt * p_hat * hbar.transpose() * gamma_inv_h;
  const Eigen::PartialPivLU<Matrix> lu(system);

  const FilterVariant variant =
      kappa == 1 ? FilterVariant::venkf : FilterVariant::denkf;
  const FullEnsemble gain_form = analyze(ens_f, obs, variant, dz, dt, xi);

  Matrix aug(d + n, p), aug_gain(d + n, p);
  aug.topRows(d) = ens_f.states;
  aug_gain.topRows(d) = gain_form.states;
  if (n > 0) {
    aug.bottomRows(n) = ens_f.params;
    aug_gain.bottomRows(n) = gain_form.params;
  }

  const Vector mean = stats.mean;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector data = dz;
    if (kappa == 1)
      data -= std::sqrt(dt) * obs.gamma.sqrt_apply(Matrix(xi.col(j)));
    data -= (0.5 * (1.0 - kappa) * dt) * (hbar * (mean - aug.col(j)));
    const Vector rhs = aug.col(j) + p_hat * (hbar.transpose() * gamma.llt().solve(data));
    const Vector implicit = lu.solve(rhs);
    const double scale = aug_gain.col(j).norm();
    const double dev = (implicit - aug_gain.col(j)).norm();
    worst = std::max(worst, scale > 0.0 ? dev / scale : dev);
  }
  return worst;
}

}  // namespace dlrenkf
