#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dlrenkf/dlr.hpp"
#include "dlrenkf/enkf.hpp"
#include "dlrenkf/observation.hpp"

namespace dlrenkf::harness {

// y = dz/dt with Gamma_tilde = Gamma/dt ("increment"), or direct per-step
// observations with Gamma taken as Gamma_tilde ("discrete")
enum class ObsConvention { increment, discrete };

struct FilterSettings {
  FilterVariant variant = FilterVariant::denkf;
  int particles = 100;
  bool dlr = false;
  int rank = 7;                  // fixed rank / warm-start rank
  bool adaptive = false;
  double threshold = 2e-8;       // adaptive truncation threshold
  int min_rank = 2;
  int warm_start_steps = 200;    // fixed-rank steps before adapting
  bool hyper = false;
  dlr::MeanMode mean_mode = dlr::MeanMode::augmented;
  int record_every = 1;
  int assimilate_every = 1;  // analyses per forecast step (1 = every step)
};

struct ExperimentConfig {
  std::string model;  // "fisher-kpp" | "bloodflow"
  std::string raw_json;
  FilterSettings filter;
  ObsConvention convention = ObsConvention::increment;
  double dt = 0.0;
  int steps = 0;
  double sigma_theta = 0.05;
  std::uint64_t seed = 1;

  // fisher-kpp block
  int fisher_n_r = 18, fisher_n_alpha = 30, fisher_n_theta = 6;
  double fisher_a = 1.0, fisher_b = 1.0, fisher_c = 0.1, fisher_reaction = 75.0;
  std::string fisher_obs = "full";  // "full" | "partial"
  double gamma = 1e-8;
  Vector theta_true;

  // bloodflow block
  std::string network_file;
  std::string network_inline;           // inline JSON overrides the file
  std::vector<int> estimated_ids;       // 1-based vessel ids
  std::vector<int> probe_ids;           // observed vessels (A and u at midpoint)
  int warmup_cycles = 2;
  double area_scale = 1e4;              // sensor reports A in cm^2
  double sigma_area = 1e-2, sigma_velocity = 1e-7;

  static ExperimentConfig from_json_text(const std::string& text,
                                         const std::string& base_dir = ".");
  static ExperimentConfig from_file(const std::string& path);
};

struct TruthTrajectory {
  double t0 = 0.0;
  double dt = 0.0;
  Matrix hx;            // k x steps, H x_true at the end of each step
  Vector initial_state; // shared particle start
  Vector final_state;
  Matrix probes;        // probe values per step (may be empty)
};

struct ObservationSequence {
  Matrix dz;  // k x steps
  Matrix y;   // k x steps, y = dz / dt bitwise
};

// deterministic truth run; observations can be synthesised at every step
TruthTrajectory simulate_truth(const ForwardModel& model,
                               const LinearOperator& h, const Vector& x0,
                               const Vector& theta_true, double t0, double dt,
                               int steps,
                               const std::function<Vector(const Vector&)>&
                                   probe = nullptr);

// dZ = H x dt + Gamma^{1/2} dV (increment view) and its rescaled twin
ObservationSequence synthesize_observations(const TruthTrajectory& truth,
                                            const NoiseCovariance& gamma,
                                            double dt, ObsConvention conv,
                                            std::uint64_t seed);

struct RunRecord {
  std::string experiment_id;
  std::string label;
  Vector theta_true;
  std::vector<double> times;
  Matrix param_mean;  // n_theta x recorded steps
  Matrix param_std;
  std::vector<std::vector<int>> rank_history;  // per step, one entry per block
  std::vector<std::vector<double>> rank_discarded;  // truncated energy per block
  double final_relative_error = 0.0;
  std::map<std::string, double> wall_clock;
  Matrix probe_traces;  // probes x recorded steps

  void write(const std::string& dir, const std::string& config_json) const;
};

// fully assembled experiment, reusable across filter settings and seeds
struct Prepared {
  ExperimentConfig cfg;
  std::shared_ptr<ForwardModel> model;
  std::shared_ptr<ObservationModel> obs;
  Vector x0;
  Vector theta_true;
  TruthTrajectory truth;
  std::vector<VariableBlock> blocks;
  std::function<Vector(const Vector&)> probe;  // on the mean state
  std::string experiment_id;
  double truth_seconds = 0.0;
};

Prepared prepare_experiment(const ExperimentConfig& cfg);

RunRecord run_prepared(const Prepared& prep, const FilterSettings& fs,
                       std::uint64_t seed);

// prepare + run with the config's own filter block and seed
RunRecord run_filter(const ExperimentConfig& cfg);

// independent repetitions; repetition r re-seeds prior and observation noise
// with seed XOR r
std::vector<RunRecord> run_repetitions(const Prepared& prep,
                                       const FilterSettings& fs,
                                       std::uint64_t seed, int repetitions);

struct ComparisonReport {
  std::vector<std::string> lines;  // csv rows, header first
  std::string to_csv() const;
};

// aggregate repeated runs into an error/timing table; all records must carry
// the same experiment id
ComparisonReport compare_runs(const std::vector<RunRecord>& records);

}  // namespace dlrenkf::harness
