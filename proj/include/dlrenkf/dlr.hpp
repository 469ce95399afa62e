#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlrenkf/enkf.hpp"
#include "dlrenkf/ensemble.hpp"
#include "dlrenkf/forward_model.hpp"
#include "dlrenkf/linalg.hpp"
#include "dlrenkf/observation.hpp"

namespace dlrenkf::dlr {

using linalg::RankPolicy;

struct BlockRank {
  std::string name;
  Eigen::Index row_begin = 0;
  Eigen::Index row_end = 0;
  int rank = 0;
  Eigen::Index rows() const { return row_end - row_begin; }
};

// Mean-separated low-rank ensemble: particle p reconstructs to
// mean + det_modes * stoch_modes.row(p)^T. det_modes is block-diagonal over
// the variable blocks; stoch_modes has zero column means.
struct DlrEnsemble {
  Vector mean;        // d
  Matrix det_modes;   // d x R_total, orthonormal columns
  Matrix stoch_modes; // P x R_total
  std::vector<BlockRank> layout;
  Matrix params;      // n_theta x P

  Eigen::Index state_dim() const { return mean.size(); }
  Eigen::Index particle_count() const { return stoch_modes.rows(); }
  Eigen::Index total_rank() const { return det_modes.cols(); }

  void validate() const;
};

// Degenerate start: all particles share `mean`, stochastic modes are zero and
// the deterministic modes are seeded with canonical directions per block (the
// first forecast replaces them with the dominant drift-anomaly directions).
DlrEnsemble from_identical(const Vector& mean, const Matrix& params,
                           const std::vector<VariableBlock>& blocks, int rank);

// Factorise an existing cloud by per-block truncated SVD of its anomalies.
DlrEnsemble from_ensemble(const FullEnsemble& ens,
                          const std::vector<VariableBlock>& blocks, int rank);

FullEnsemble reconstruct(const DlrEnsemble& dlr);

struct RankRecord {
  std::vector<int> block_ranks;
  std::vector<double> discarded_energy;  // per block, sum of dropped sigma^2
  int total_rank() const {
    int r = 0;
    for (int b : block_ranks) r += b;
    return r;
  }
};

enum class MeanMode { augmented, separate };

struct BugOptions {
  RankPolicy policy = RankPolicy::fixed(1);
  MeanMode mean_mode = MeanMode::augmented;
  bool hyper = false;
};

// Basis Update & Galerkin forecast step: K/L basis updates on the augmented
// factors, Galerkin coefficient update, mean extraction and per-block
// truncation. Parameters pass through unchanged.
DlrEnsemble bug_forecast(const DlrEnsemble& dlr, const ForwardModel& model,
                         double t, double dt, const BugOptions& opts,
                         RankRecord* record = nullptr);

struct TruncationResult {
  Matrix det_modes;
  Matrix stoch_modes;
  std::vector<BlockRank> layout;
  std::vector<double> discarded_energy;
};

// Per-block truncation of U_bar * S_tilde * Y_bar^T. y_bar is orthonormal in
// the E_P inner product (columns of Euclidean norm sqrt(P)); s_tilde must
// already have the mean split off. prev_ranks bounds the adaptive growth at
// twice the incoming rank per block.
TruncationResult truncate(const Matrix& u_bar, const Matrix& s_tilde,
                          const Matrix& y_bar,
                          const std::vector<VariableBlock>& blocks,
                          const RankPolicy& policy,
                          const std::vector<int>& prev_ranks);

// Reduced-subspace analysis: the mean and the stochastic modes move, the
// deterministic modes stay fixed; parameters update through their
// cross-covariance with the reconstructed state anomalies.
DlrEnsemble dlr_analyze(const DlrEnsemble& dlr, const ObservationModel& obs,
                        FilterVariant variant, const Vector& dz, double dt,
                        const Matrix& xi);

// rescaled discrete-observation view, bit-identical to dlr_analyze for
// y = dz/dt and gamma_tilde = Gamma/dt
DlrEnsemble dlr_analyze_discrete(const DlrEnsemble& dlr,
                                 const LinearOperator& h,
                                 const NoiseCovariance& gamma_tilde,
                                 FilterVariant variant, const Vector& y,
                                 const Matrix& xi);

DlrEnsemble dlr_step(const DlrEnsemble& dlr, const ForwardModel& model,
                     const ObservationModel& obs, FilterVariant variant,
                     const Vector& dz, double t, double dt,
                     const BugOptions& opts, std::uint64_t seed,
                     std::uint64_t step_index, RankRecord* record = nullptr);

}  // namespace dlrenkf::dlr
