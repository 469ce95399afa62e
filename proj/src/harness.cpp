#include "dlrenkf/harness.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dlrenkf/models/bloodflow.hpp"
#include "dlrenkf/models/fisher_kpp.hpp"
#include "dlrenkf/rng.hpp"

namespace dlrenkf::harness {

using nlohmann::json;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text,
                                                  const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("experiment config: invalid JSON: ") +
                      e.what());
  }
  ExperimentConfig cfg;
  cfg.raw_json = text;
  cfg.model = j.value("model", "");
  if (cfg.model != "fisher-kpp" && cfg.model != "bloodflow")
    throw ConfigError("experiment config: unknown model '" + cfg.model + "'");
  cfg.seed = j.value("seed", 1ull);

  const auto& tm = j.at("time");
  cfg.dt = tm.at("dt").get<double>();
  if (!(cfg.dt > 0.0)) throw ConfigError("time.dt must be positive");
  double horizon = tm.value("horizon", 0.0);

  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    cfg.filter.variant = variant_from_string(f.value("variant", "denkf"));
    cfg.filter.particles = f.value("particles", 100);
    cfg.filter.dlr = f.value("dlr", false);
    cfg.filter.rank = f.value("rank", 7);
    cfg.filter.adaptive = f.value("adaptive", false);
    cfg.filter.threshold = f.value("threshold", 2e-8);
    cfg.filter.min_rank = f.value("min_rank", 2);
    cfg.filter.warm_start_steps = f.value("warm_start", 200);
    cfg.filter.hyper = f.value("hyper", false);
    cfg.filter.record_every = f.value("record_every", 1);
    cfg.filter.assimilate_every = f.value("assimilate_every", 1);
    if (cfg.filter.particles < 2)
      throw ConfigError("filter.particles must be at least 2");
  }

  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    cfg.sigma_theta = p.value("sigma_theta", cfg.sigma_theta);
    if (!(cfg.sigma_theta > 0.0))
      throw ConfigError("prior.sigma_theta must be positive");
    if (p.contains("theta_true")) {
      const auto& tt = p.at("theta_true");
      cfg.theta_true.resize(tt.size());
      for (std::size_t i = 0; i < tt.size(); ++i) cfg.theta_true[i] = tt[i];
    }
  }

  const auto& ob = j.at("observation");
  const std::string conv = ob.value("convention",
                                    cfg.model == "bloodflow" ? "discrete"
                                                             : "increment");
  if (conv == "increment")
    cfg.convention = ObsConvention::increment;
  else if (conv == "discrete")
    cfg.convention = ObsConvention::discrete;
  else
    throw ConfigError("observation.convention must be increment or discrete");

  if (cfg.model == "fisher-kpp") {
    const auto fb = j.value("fisher", json::object());
    cfg.fisher_n_r = fb.value("n_r", 18);
    cfg.fisher_n_alpha = fb.value("n_alpha", 30);
    cfg.fisher_n_theta = fb.value("n_theta", 6);
    cfg.fisher_a = fb.value("a", 1.0);
    cfg.fisher_b = fb.value("b", 1.0);
    cfg.fisher_c = fb.value("c", 0.1);
    cfg.fisher_reaction = fb.value("reaction", 75.0);
    cfg.fisher_obs = ob.value("kind", "full");
    if (cfg.fisher_obs != "full" && cfg.fisher_obs != "partial")
      throw ConfigError("observation.kind must be full or partial");
    cfg.gamma = ob.value("gamma", 1e-8);
    if (cfg.theta_true.size() == 0) {
      cfg.theta_true.resize(6);
      cfg.theta_true << 0.271, 0.266, 0.504, -0.111, -0.014, -0.086;
    }
    if (cfg.theta_true.size() != cfg.fisher_n_theta)
      throw ConfigError("prior.theta_true length must match fisher.n_theta");
    if (horizon <= 0.0) horizon = 0.154;
    cfg.steps = static_cast<int>(std::llround(horizon / cfg.dt));
  } else {
    const auto& bb = j.at("bloodflow");
    if (bb.contains("network_inline"))
      cfg.network_inline = bb.at("network_inline").dump();
    else
      cfg.network_file =
          (std::filesystem::path(base_dir) /
           bb.at("network").get<std::string>()).string();
    for (const auto& id : bb.at("estimated")) cfg.estimated_ids.push_back(id);
    for (const auto& id : bb.at("probes")) cfg.probe_ids.push_back(id);
    if (cfg.estimated_ids.empty() || cfg.probe_ids.empty())
      throw ConfigError("bloodflow.estimated and bloodflow.probes required");
    cfg.warmup_cycles = bb.value("warmup_cycles", 2);
    cfg.area_scale = bb.value("area_scale", 1e4);
    cfg.sigma_area = ob.value("sigma_area", 1e-2);
    cfg.sigma_velocity = ob.value("sigma_velocity", 1e-7);
    const double cycles = tm.value("cycles", 0.0);
    if (horizon <= 0.0 && cycles <= 0.0)
      throw ConfigError("time.horizon or time.cycles required");
    if (horizon <= 0.0) horizon = cycles * 0.8;
    cfg.steps = static_cast<int>(std::llround(horizon / cfg.dt));
  }
  if (cfg.steps <= 0) throw ConfigError("time horizon gives zero steps");
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_json_text(read_file(path),
                        std::filesystem::path(path).parent_path().string());
}

TruthTrajectory simulate_truth(const ForwardModel& model,
                               const LinearOperator& h, const Vector& x0,
                               const Vector& theta_true, double t0, double dt,
                               int steps,
                               const std::function<Vector(const Vector&)>& probe) {
  TruthTrajectory out;
  out.t0 = t0;
  out.dt = dt;
  out.initial_state = x0;
  out.hx.resize(h.rows(), steps);

  Matrix x = x0;
  const Matrix theta = theta_true;
  Matrix f(x.rows(), 1);
  for (int s = 0; s < steps; ++s) {
    model.drift(t0 + s * dt, x, theta, f);
    if (!f.allFinite())
      throw NonFinite("simulate_truth: drift blow-up at step " +
                      std::to_string(s));
    x += dt * f;
    out.hx.col(s) = h.apply(Vector(x.col(0)));
    if (probe) {
      const Vector pv = probe(x.col(0));
      if (out.probes.size() == 0) out.probes.resize(pv.size(), steps);
      out.probes.col(s) = pv;
    }
  }
  out.final_state = x.col(0);
  return out;
}

ObservationSequence synthesize_observations(const TruthTrajectory& truth,
                                            const NoiseCovariance& gamma,
                                            double dt, ObsConvention conv,
                                            std::uint64_t seed) {
  const Eigen::Index k = truth.hx.rows();
  const Eigen::Index steps = truth.hx.cols();
  ObservationSequence out;
  out.dz.resize(k, steps);
  out.y.resize(k, steps);
  for (Eigen::Index s = 0; s < steps; ++s) {
    NoiseStream stream(seed, NoiseDomain::observation,
                       static_cast<std::uint64_t>(s));
    const Vector xi = stream.normal_vector(k);
    if (conv == ObsConvention::increment) {
      out.dz.col(s) = truth.hx.col(s) * dt +
                      std::sqrt(dt) * gamma.sqrt_apply(Matrix(xi)).col(0);
      out.y.col(s) = out.dz.col(s) / dt;
    } else {
      out.y.col(s) = truth.hx.col(s) + gamma.sqrt_apply(Matrix(xi)).col(0);
      out.dz.col(s) = out.y.col(s) * dt;
    }
  }
  return out;
}

Prepared prepare_experiment(const ExperimentConfig& cfg) {
  Prepared prep;
  prep.cfg = cfg;
  const auto t_start = std::chrono::steady_clock::now();

  if (cfg.model == "fisher-kpp") {
    models::PolarGrid grid;
    grid.n_r = cfg.fisher_n_r;
    grid.n_alpha = cfg.fisher_n_alpha;
    auto model = std::make_shared<models::FisherKpp>(
        grid, cfg.fisher_n_theta, cfg.fisher_a, cfg.fisher_b, cfg.fisher_c,
        cfg.fisher_reaction);
    prep.model = model;
    prep.blocks = model->blocks();

    LinearOperator h = cfg.fisher_obs == "full"
        ? LinearOperator::identity(grid.size())
        : LinearOperator::dense(models::partial_observation_matrix(grid));
    NoiseCovariance gamma =
        NoiseCovariance::scaled_identity(h.rows(), cfg.gamma);
    prep.obs = std::make_shared<ObservationModel>(std::move(h), std::move(gamma));

    prep.x0 = models::initial_condition(grid);
    prep.theta_true = cfg.theta_true;
    prep.truth = simulate_truth(*model, prep.obs->h, prep.x0, prep.theta_true,
                                0.0, cfg.dt, cfg.steps);
  } else {
    const auto net = cfg.network_inline.empty()
        ? models::load_network_file(cfg.network_file)
        : models::load_network(cfg.network_inline);

    std::map<int, int> id_to_index;
    for (std::size_t v = 0; v < net.vessels.size(); ++v)
      id_to_index[net.vessels[v].id] = static_cast<int>(v);
    std::vector<int> estimated;
    for (int id : cfg.estimated_ids) {
      if (!id_to_index.count(id))
        throw ConfigError("estimated vessel id not in network: " +
                          std::to_string(id));
      estimated.push_back(id_to_index[id]);
    }

    auto model = std::make_shared<models::BloodFlowModel>(net, estimated, cfg.dt);
    prep.model = model;
    prep.blocks = model->blocks();

    prep.theta_true.resize(estimated.size());
    for (std::size_t k = 0; k < estimated.size(); ++k)
      prep.theta_true[k] = net.vessels[estimated[k]].beta;

    // sensors: A (in cm^2) and u at the midpoint cell of each probed vessel
    Matrix h = Matrix::Zero(2 * cfg.probe_ids.size(), net.state_dim());
    Vector gdiag(2 * cfg.probe_ids.size());
    for (std::size_t pi = 0; pi < cfg.probe_ids.size(); ++pi) {
      if (!id_to_index.count(cfg.probe_ids[pi]))
        throw ConfigError("probe vessel id not in network: " +
                          std::to_string(cfg.probe_ids[pi]));
      const int v = id_to_index[cfg.probe_ids[pi]];
      const int mid = net.vessels[v].cells / 2;
      h(pi, net.a_index(v, mid)) = cfg.area_scale;
      h(cfg.probe_ids.size() + pi, net.u_index(v, mid)) = 1.0;
      gdiag[pi] = cfg.sigma_area;
      gdiag[cfg.probe_ids.size() + pi] = cfg.sigma_velocity;
    }
    prep.obs = std::make_shared<ObservationModel>(
        LinearOperator::dense(std::move(h)), NoiseCovariance::diagonal(gdiag));

    // shared warm-up from rest to quasi-periodic flow, with the true betas
    Vector x = model->rest_state();
    const int warm_steps = static_cast<int>(
        std::llround(cfg.warmup_cycles * net.inflow.period / cfg.dt));
    for (int s = 0; s < warm_steps; ++s)
      models::step_network(net, s * cfg.dt, cfg.dt, x);
    prep.x0 = x;

    // probe readout on the mean state: (Q, p) at each probed vessel midpoint
    const auto constants = net.constants;
    auto vessels = net.vessels;
    std::vector<std::pair<int, int>> probe_cells;
    for (int id : cfg.probe_ids)
      probe_cells.push_back({id_to_index[id],
                             net.vessels[id_to_index[id]].cells / 2});
    const auto net_copy = net;
    prep.probe = [net_copy, probe_cells, constants](const Vector& state) {
      Vector out(2 * probe_cells.size());
      for (std::size_t i = 0; i < probe_cells.size(); ++i) {
        const auto [v, mid] = probe_cells[i];
        const double a = state[net_copy.a_index(v, mid)];
        const double u = state[net_copy.u_index(v, mid)];
        out[2 * i] = a * u;  // flow rate
        out[2 * i + 1] = models::pressure(a, net_copy.vessels[v].beta,
                                          net_copy.vessels[v].area0, constants);
      }
      return out;
    };

    const double t0 = warm_steps * cfg.dt;
    prep.truth = simulate_truth(*model, prep.obs->h, prep.x0, prep.theta_true,
                                t0, cfg.dt, cfg.steps, prep.probe);
  }

  std::ostringstream id;
  id << cfg.model << "|d=" << prep.model->state_dim()
     << "|k=" << prep.obs->gamma.dim() << "|dt=" << cfg.dt
     << "|steps=" << cfg.steps << "|conv="
     << (cfg.convention == ObsConvention::increment ? "inc" : "disc")
     << "|sigma=" << cfg.sigma_theta;
  prep.experiment_id = id.str();
  prep.truth_seconds = seconds_since(t_start);
  return prep;
}

RunRecord run_prepared(const Prepared& prep, const FilterSettings& fs,
                       std::uint64_t seed) {
  const auto& cfg = prep.cfg;
  const Eigen::Index d = prep.model->state_dim();
  const Eigen::Index n_theta = prep.model->param_dim();
  const Eigen::Index k = prep.obs->gamma.dim();
  const Eigen::Index particles = fs.particles;
  const double dt = cfg.dt;

  const auto t_start = std::chrono::steady_clock::now();
  const ObservationSequence obs_seq = synthesize_observations(
      prep.truth, prep.obs->gamma, dt, cfg.convention, seed);

  // prior: theta_perturbed ~ N(theta_true, sigma^2), particles around it
  NoiseStream perturb(seed, NoiseDomain::prior_perturb);
  const Vector theta_perturbed =
      prep.theta_true + cfg.sigma_theta * perturb.normal_vector(n_theta);
  Matrix theta0(n_theta, particles);
  for (Eigen::Index p = 0; p < particles; ++p) {
    NoiseStream s(seed, NoiseDomain::prior_theta, 0,
                  static_cast<std::uint64_t>(p));
    theta0.col(p) = theta_perturbed + cfg.sigma_theta * s.normal_vector(n_theta);
  }

  RunRecord rec;
  rec.experiment_id = prep.experiment_id;
  rec.theta_true = prep.theta_true;
  {
    std::ostringstream lab;
    lab << to_string(fs.variant)
        << (fs.dlr ? (fs.adaptive ? "-dlr-adaptive" : "-dlr-r" +
                      std::to_string(fs.rank))
                   : "-fom");
    rec.label = lab.str();
  }

  const int recorded =
      (cfg.steps + fs.record_every - 1) / fs.record_every;
  rec.times.reserve(recorded);
  rec.param_mean.resize(n_theta, recorded);
  rec.param_std.resize(n_theta, recorded);
  const bool with_probes = static_cast<bool>(prep.probe);
  int rec_col = 0;

  auto record_state = [&](int s, const Matrix& params, const Vector& mean_state) {
    if (s % fs.record_every != 0) return;
    rec.times.push_back(prep.truth.t0 + (s + 1) * dt);
    const Vector m = params.rowwise().mean();
    rec.param_mean.col(rec_col) = m;
    for (Eigen::Index i = 0; i < n_theta; ++i) {
      const double var =
          (params.row(i).array() - m[i]).square().sum() / double(particles - 1);
      rec.param_std(i, rec_col) = std::sqrt(var);
    }
    if (with_probes) {
      const Vector pv = prep.probe(mean_state);
      if (rec.probe_traces.size() == 0)
        rec.probe_traces.resize(pv.size(), recorded);
      rec.probe_traces.col(rec_col) = pv;
    }
    ++rec_col;
  };

  const double t0 = prep.truth.t0;
  if (!fs.dlr) {
    FullEnsemble ens;
    ens.states = prep.x0.replicate(1, particles);
    ens.params = theta0;
    Vector dz_window = Vector::Zero(k);
    for (int s = 0; s < cfg.steps; ++s) {
      const double t = t0 + s * dt;
      ens = forecast(ens, *prep.model, t, dt);
      dz_window += obs_seq.dz.col(s);
      if ((s + 1) % fs.assimilate_every == 0) {
        const double dt_eff = fs.assimilate_every * dt;
        const Matrix xi = draw_analysis_noise(seed, s, k, particles, fs.variant);
        if (cfg.convention == ObsConvention::increment)
          ens = analyze(ens, *prep.obs, fs.variant, dz_window, dt_eff, xi);
        else
          ens = analyze_discrete(ens, prep.obs->h, prep.obs->gamma, fs.variant,
                                 Vector(dz_window / dt_eff), xi);
        dz_window.setZero();
      }
      record_state(s, ens.params, ens.states.rowwise().mean());
    }
    const Vector final_mean = ens.params.rowwise().mean();
    rec.final_relative_error =
        (final_mean - prep.theta_true).norm() / prep.theta_true.norm();
  } else {
    auto lr = dlr::from_identical(prep.x0, theta0, prep.blocks, fs.rank);
    Vector dz_window = Vector::Zero(k);
    dlr::BugOptions opts;
    opts.mean_mode = fs.mean_mode;
    opts.hyper = fs.hyper;
    for (int s = 0; s < cfg.steps; ++s) {
      const double t = t0 + s * dt;
      opts.policy = (fs.adaptive && s >= fs.warm_start_steps)
          ? dlr::RankPolicy::adaptive(fs.threshold, fs.min_rank)
          : dlr::RankPolicy::fixed(fs.rank);
      dlr::RankRecord rank_rec;
      lr = dlr::bug_forecast(lr, *prep.model, t, dt, opts, &rank_rec);
      dz_window += obs_seq.dz.col(s);
      if ((s + 1) % fs.assimilate_every == 0) {
        const double dt_eff = fs.assimilate_every * dt;
        const Matrix xi = draw_analysis_noise(seed, s, k, particles, fs.variant);
        if (cfg.convention == ObsConvention::increment)
          lr = dlr::dlr_analyze(lr, *prep.obs, fs.variant, dz_window, dt_eff,
                                xi);
        else
          lr = dlr::dlr_analyze_discrete(lr, prep.obs->h, prep.obs->gamma,
                                         fs.variant, Vector(dz_window / dt_eff),
                                         xi);
        dz_window.setZero();
      }
      rec.rank_history.push_back(rank_rec.block_ranks);
      rec.rank_discarded.push_back(rank_rec.discarded_energy);
      record_state(s, lr.params, lr.mean);
    }
    const Vector final_mean = lr.params.rowwise().mean();
    rec.final_relative_error =
        (final_mean - prep.theta_true).norm() / prep.theta_true.norm();
  }

  rec.wall_clock["truth"] = prep.truth_seconds;
  rec.wall_clock["assimilation"] = seconds_since(t_start);
  rec.wall_clock["total"] = prep.truth_seconds + rec.wall_clock["assimilation"];
  if (!std::isfinite(rec.final_relative_error))
    throw NonFinite("run_filter: non-finite final error");
  return rec;
}

std::vector<RunRecord> run_repetitions(const Prepared& prep,
                                       const FilterSettings& fs,
                                       std::uint64_t seed, int repetitions) {
  if (repetitions < 1) throw ConfigError("run_repetitions: need at least one");
  std::vector<RunRecord> out;
  out.reserve(repetitions);
  for (int r = 0; r < repetitions; ++r)
    out.push_back(run_prepared(prep, fs, seed ^ static_cast<std::uint64_t>(r)));
  return out;
}

RunRecord run_filter(const ExperimentConfig& cfg) {
  const Prepared prep = prepare_experiment(cfg);
  return run_prepared(prep, cfg.filter, cfg.seed);
}

void RunRecord::write(const std::string& dir,
                      const std::string& config_json) const {
  namespace fsys = std::filesystem;
  fsys::create_directories(dir);
  if (!config_json.empty()) {
    std::ofstream(fsys::path(dir) / "config.json") << config_json;
  }
  {
    json m;
    m["label"] = label;
    m["experiment_id"] = experiment_id;
    m["final_relative_error"] = final_relative_error;
    m["wall_clock"] = wall_clock;
    m["theta_true"] = std::vector<double>(theta_true.data(),
                                          theta_true.data() + theta_true.size());
    std::ofstream(fsys::path(dir) / "metrics.json") << m.dump(1);
  }
  {
    std::ofstream csv(fsys::path(dir) / "params_trajectory.csv");
    csv << "t";
    for (Eigen::Index i = 0; i < param_mean.rows(); ++i) csv << ",mean_" << i;
    for (Eigen::Index i = 0; i < param_mean.rows(); ++i) csv << ",std_" << i;
    csv << "\n";
    csv.precision(12);
    for (std::size_t s = 0; s < times.size(); ++s) {
      csv << times[s];
      for (Eigen::Index i = 0; i < param_mean.rows(); ++i)
        csv << "," << param_mean(i, s);
      for (Eigen::Index i = 0; i < param_std.rows(); ++i)
        csv << "," << param_std(i, s);
      csv << "\n";
    }
  }
  if (!rank_history.empty()) {
    std::ofstream csv(fsys::path(dir) / "rank_history.csv");
    csv << "step,total";
    for (std::size_t b = 0; b < rank_history.front().size(); ++b)
      csv << ",block_" << b;
    csv << "\n";
    for (std::size_t s = 0; s < rank_history.size(); ++s) {
      int total = 0;
      for (int r : rank_history[s]) total += r;
      csv << s << "," << total;
      for (int r : rank_history[s]) csv << "," << r;
      csv << "\n";
    }
  }
  if (probe_traces.size() > 0) {
    std::ofstream csv(fsys::path(dir) / "probes.csv");
    csv << "t";
    for (Eigen::Index i = 0; i < probe_traces.rows(); i += 2)
      csv << ",Q_" << i / 2 << ",p_" << i / 2;
    csv << "\n";
    csv.precision(12);
    for (std::size_t s = 0; s < times.size(); ++s) {
      csv << times[s];
      for (Eigen::Index i = 0; i < probe_traces.rows(); ++i)
        csv << "," << probe_traces(i, s);
      csv << "\n";
    }
  }
}

std::string ComparisonReport::to_csv() const {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

ComparisonReport compare_runs(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("compare_runs: no records");
  for (const auto& r : records)
    if (r.experiment_id != records.front().experiment_id)
      throw MismatchedExperiments("compare_runs: records from different experiments");

  struct Agg {
    std::vector<double> errors;
    std::vector<double> seconds;
  };
  std::map<std::string, Agg> by_label;
  for (const auto& r : records) {
    by_label[r.label].errors.push_back(r.final_relative_error);
    by_label[r.label].seconds.push_back(r.wall_clock.count("assimilation")
                                            ? r.wall_clock.at("assimilation")
                                            : 0.0);
  }

  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / v.size();
  };
  auto std_of = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
  };

  // FOM baseline times per variant for speedup columns
  std::map<std::string, double> fom_seconds;
  for (const auto& [label, agg] : by_label) {
    const auto pos = label.find("-fom");
    if (pos != std::string::npos)
      fom_seconds[label.substr(0, pos)] = mean_of(agg.seconds);
  }

  ComparisonReport rep;
  rep.lines.push_back(
      "label,runs,mean_final_error,std_final_error,mean_seconds,speedup_vs_fom");
  for (const auto& [label, agg] : by_label) {
    const std::string variant = label.substr(0, label.find('-'));
    std::ostringstream row;
    row.precision(6);
    row << label << "," << agg.errors.size() << "," << mean_of(agg.errors)
        << "," << std_of(agg.errors) << "," << mean_of(agg.seconds) << ",";
    if (fom_seconds.count(variant) && mean_of(agg.seconds) > 0.0)
      row << fom_seconds[variant] / mean_of(agg.seconds);
    rep.lines.push_back(row.str());
  }
  return rep;
}

}  // namespace dlrenkf::harness
