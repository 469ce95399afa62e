#pragma once

#include <cstdint>

#include "dlrenkf/ensemble.hpp"
#include "dlrenkf/forward_model.hpp"
#include "dlrenkf/observation.hpp"

namespace dlrenkf {

// (eta, kappa) parameter combinations of the analysis update. Only the three
// named variants are admissible.
enum class FilterVariant { venkf, denkf, senkf };

constexpr int kappa_of(FilterVariant v) {
  return v == FilterVariant::denkf ? 0 : 1;
}
constexpr int eta_of(FilterVariant v) {
  return v == FilterVariant::senkf ? 0 : 1;
}

FilterVariant variant_from_string(const std::string& name);
std::string to_string(FilterVariant v);

// One explicit Euler step of the model dynamics per particle; parameters have
// zero drift and pass through unchanged.
FullEnsemble forecast(const FullEnsemble& ens, const ForwardModel& model,
                      double t, double dt);

struct GainBlocks {
  Matrix k_xx;     // d x k
  Matrix k_theta;  // n_theta x k
};

// Continuous-form gain K = P_hat Hbar^T (Gamma + dt Hbar P_hat Hbar^T)^{-1}
// assembled from anomaly factors (cost O((d+n)Pk), the covariance itself is
// never formed). Intended for small k; analyze() applies the same gain
// without materialising it.
GainBlocks kalman_gain(const Matrix& anomalies, Eigen::Index state_dim,
                       const ObservationModel& obs, double dt);

// Analysis update for the observation increment dz over [t0, t1]. xi holds
// one standard-normal k-vector per particle (column p), consumed only by
// kappa = 1 variants.
FullEnsemble analyze(const FullEnsemble& ens_f, const ObservationModel& obs,
                     FilterVariant variant, const Vector& dz, double dt,
                     const Matrix& xi);

// Same update in the rescaled discrete-observation view y = dz/dt with noise
// level gamma_tilde = Gamma/dt. analyze() canonicalises to this form, so both
// entry points produce bit-identical ensembles for matching inputs.
FullEnsemble analyze_discrete(const FullEnsemble& ens_f,
                              const LinearOperator& h,
                              const NoiseCovariance& gamma_tilde,
                              FilterVariant variant, const Vector& y,
                              const Matrix& xi);

// Draws the per-particle perturbations from (seed, step, particle) streams
// and runs forecast + analyze.
FullEnsemble step(const FullEnsemble& ens, const ForwardModel& model,
                  const ObservationModel& obs, FilterVariant variant,
                  const Vector& dz, double t, double dt, std::uint64_t seed,
                  std::uint64_t step_index);

Matrix draw_analysis_noise(std::uint64_t seed, std::uint64_t step_index,
                           Eigen::Index k, Eigen::Index particles,
                           FilterVariant variant);

// Max relative deviation over particles between the semi-implicit analysis
// solve (I + dt P_hat Hbar^T Gamma^{-1} Hbar) X^a = rhs and the explicit
// Kalman-gain form, on a dense small instance. eta = 1 throughout.
double semi_implicit_equivalence_check(const FullEnsemble& ens_f,
                                       const ObservationModel& obs, int kappa,
                                       const Vector& dz, double dt,
                                       const Matrix& xi);

}  // namespace dlrenkf
