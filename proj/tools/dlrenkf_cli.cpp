#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dlrenkf/harness.hpp"

namespace fs = std::filesystem;
using namespace dlrenkf;
using namespace dlrenkf::harness;
using nlohmann::json;

namespace {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// minimal static SVG line plot
void write_svg(const std::string& path, const std::string& title,
               const std::vector<Series>& series) {
  if (series.empty()) return;
  const int w = 860, h = 480, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
  };
  auto py = [&](double y) {
    return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
  };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ofstream svg(path);
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
      << "' height='" << h << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << w / 2 << "' y='24' text-anchor='middle' "
      << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  svg << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr
      << "' y2='" << h - mb << "' stroke='black'/>\n";
  svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << h - mb << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    const double xv = xmin + tick * (xmax - xmin) / 5;
    const double yv = ymin + tick * (ymax - ymin) / 5;
    svg << "<text x='" << px(xv) << "' y='" << h - mb + 18
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>"
        << std::setprecision(4) << xv << "</text>\n";
    svg << "<text x='" << ml - 6 << "' y='" << py(yv) + 4
        << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
        << std::setprecision(4) << yv << "</text>\n";
  }
  int ci = 0;
  for (const auto& s : series) {
    svg << "<polyline fill='none' stroke='" << colors[ci % 8]
        << "' stroke-width='1.4' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
    svg << "'/>\n";
    svg << "<text x='" << w - mr - 6 << "' y='" << mt + 16 * ci + 10
        << "' text-anchor='end' font-family='sans-serif' font-size='12' fill='"
        << colors[ci % 8] << "'>" << s.name << "</text>\n";
    ++ci;
  }
  svg << "</svg>\n";
}

std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) header.push_back(cell);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CliOverrides {
  std::string filter;
  bool dlr = false;
  int rank = -1;
  double adaptive = -1.0;
  int min_rank = -1;
  bool hyper = false;
  int particles = -1;

  FilterSettings apply(FilterSettings fs) const {
    if (!filter.empty()) fs.variant = variant_from_string(filter);
    if (dlr) fs.dlr = true;
    if (rank > 0) {
      fs.rank = rank;
      fs.dlr = true;
    }
    if (adaptive > 0.0) {
      fs.adaptive = true;
      fs.dlr = true;
      fs.threshold = adaptive;
    }
    if (min_rank > 0) fs.min_rank = min_rank;
    if (hyper) fs.hyper = true;
    if (particles > 1) fs.particles = particles;
    return fs;
  }
};

int cmd_simulate_truth(const std::string& config, const std::string& out) {
  const auto cfg = ExperimentConfig::from_file(config);
  const auto prep = prepare_experiment(cfg);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "config.json") << cfg.raw_json;

  json summary;
  summary["experiment_id"] = prep.experiment_id;
  summary["t0"] = prep.truth.t0;
  summary["dt"] = prep.truth.dt;
  summary["steps"] = cfg.steps;
  summary["state_dim"] = prep.model->state_dim();
  summary["truth_seconds"] = prep.truth_seconds;
  std::ofstream(fs::path(out) / "truth_summary.json") << summary.dump(1);

  {
    std::ofstream fsv(fs::path(out) / "final_state.csv");
    fsv.precision(15);
    for (Eigen::Index i = 0; i < prep.truth.final_state.size(); ++i)
      fsv << prep.truth.final_state[i] << "\n";
  }
  if (prep.truth.probes.size() > 0) {
    std::ofstream pv(fs::path(out) / "truth_probes.csv");
    pv << "t";
    for (Eigen::Index i = 0; i < prep.truth.probes.rows(); i += 2)
      pv << ",Q_" << i / 2 << ",p_" << i / 2;
    pv << "\n";
    pv.precision(12);
    for (Eigen::Index s = 0; s < prep.truth.probes.cols(); ++s) {
      pv << prep.truth.t0 + (s + 1) * prep.truth.dt;
      for (Eigen::Index i = 0; i < prep.truth.probes.rows(); ++i)
        pv << "," << prep.truth.probes(i, s);
      pv << "\n";
    }
  }
  std::cout << "truth written to " << out << "\n";
  return 0;
}

RunRecord record_from_metrics(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "metrics.json");
  if (!in) throw ConfigError("no metrics.json in " + dir);
  json m = json::parse(in);
  RunRecord rec;
  rec.label = m.at("label");
  rec.experiment_id = m.at("experiment_id");
  rec.final_relative_error = m.at("final_relative_error");
  for (auto& [k, v] : m.at("wall_clock").items())
    rec.wall_clock[k] = v.get<double>();
  return rec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Joint state-parameter ensemble Kalman filtering with dynamical "
      "low-rank forecasts"};
  app.require_subcommand(1);

  std::string config, out, ranks_csv, run_dir;
  std::vector<std::string> compare_dirs;
  std::uint64_t seed = 0;
  CliOverrides ov;

  auto* sim = app.add_subcommand("simulate-truth", "run the true dynamics");
  sim->add_option("--config", config, "experiment config file")->required();
  sim->add_option("--out", out, "output directory")->required();

  auto* run = app.add_subcommand("run", "run one filter twin experiment");
  run->add_option("--config", config, "experiment config file")->required();
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--filter", ov.filter, "venkf|denkf|senkf");
  run->add_flag("--dlr", ov.dlr, "use the dynamical low-rank filter");
  run->add_option("--rank", ov.rank, "fixed DLR rank");
  run->add_option("--adaptive", ov.adaptive, "adaptive truncation threshold");
  run->add_option("--min-rank", ov.min_rank, "adaptive rank floor");
  run->add_flag("--hyper", ov.hyper, "DEIM/CUR hyper-reduction");
  run->add_option("--particles", ov.particles, "ensemble size");
  auto* seed_opt = run->add_option("--seed", seed, "master seed");
  int repeat = 1;
  run->add_option("--repeat", repeat, "independent repetitions (seed XOR r)");

  auto* cmp = app.add_subcommand("compare", "aggregate run directories");
  cmp->add_option("dirs", compare_dirs, "run directories")->required();
  cmp->add_option("--out", out, "csv output file");

  auto* sweep = app.add_subcommand("sweep-rank", "FOM plus DLR rank sweep");
  sweep->add_option("--config", config, "experiment config file")->required();
  sweep->add_option("--ranks", ranks_csv, "comma-separated ranks")->required();
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_option("--filter", ov.filter, "venkf|denkf|senkf");
  sweep->add_option("--particles", ov.particles, "ensemble size");

  auto* plot = app.add_subcommand("plot", "emit SVG plots for a run");
  plot->add_option("--run", run_dir, "run directory")->required();
  plot->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate_truth(config, out);

    if (run->parsed()) {
      auto cfg = ExperimentConfig::from_file(config);
      cfg.filter = ov.apply(cfg.filter);
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (repeat <= 1) {
        const auto rec = run_filter(cfg);
        rec.write(out, cfg.raw_json);
        std::cout << rec.label << ": final relative error "
                  << rec.final_relative_error << " ("
                  << rec.wall_clock.at("assimilation") << " s assimilation)\n";
        return 0;
      }
      const auto prep = prepare_experiment(cfg);
      const auto recs = run_repetitions(prep, cfg.filter, cfg.seed, repeat);
      for (int r = 0; r < repeat; ++r) {
        recs[r].write((fs::path(out) / ("rep" + std::to_string(r))).string(),
                      cfg.raw_json);
        std::cout << recs[r].label << " rep " << r << ": "
                  << recs[r].final_relative_error << "\n";
      }
      const auto rep_table = compare_runs(recs);
      fs::create_directories(out);
      std::ofstream(fs::path(out) / "comparison.csv") << rep_table.to_csv();
      std::cout << rep_table.to_csv();
      return 0;
    }

    if (cmp->parsed()) {
      std::vector<RunRecord> records;
      for (const auto& d : compare_dirs) records.push_back(record_from_metrics(d));
      const auto rep = compare_runs(records);
      if (out.empty()) {
        std::cout << rep.to_csv();
      } else {
        std::ofstream(out) << rep.to_csv();
        std::cout << "comparison written to " << out << "\n";
      }
      return 0;
    }

    if (sweep->parsed()) {
      auto cfg = ExperimentConfig::from_file(config);
      cfg.filter = ov.apply(cfg.filter);
      std::vector<int> ranks;
      std::stringstream ss(ranks_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) ranks.push_back(std::stoi(tok));
      if (ranks.empty()) throw ConfigError("sweep-rank: empty rank list");

      const auto prep = prepare_experiment(cfg);
      std::vector<RunRecord> records;
      auto fs_run = cfg.filter;
      fs_run.dlr = false;
      records.push_back(run_prepared(prep, fs_run, cfg.seed));
      records.back().write((fs::path(out) / records.back().label).string(),
                           cfg.raw_json);
      std::cout << records.back().label << ": "
                << records.back().final_relative_error << "\n";
      for (int r : ranks) {
        fs_run.dlr = true;
        fs_run.rank = r;
        records.push_back(run_prepared(prep, fs_run, cfg.seed));
        records.back().write((fs::path(out) / records.back().label).string(),
                             cfg.raw_json);
        std::cout << records.back().label << ": "
                  << records.back().final_relative_error << "\n";
      }
      const auto rep = compare_runs(records);
      fs::create_directories(out);
      std::ofstream(fs::path(out) / "comparison.csv") << rep.to_csv();
      std::cout << rep.to_csv();
      return 0;
    }

    if (plot->parsed()) {
      fs::create_directories(out);
      std::vector<std::string> header;
      const auto rows = read_csv(
          (fs::path(run_dir) / "params_trajectory.csv").string(), header);
      if (rows.empty()) throw ConfigError("plot: empty parameter trajectory");
      const std::size_t n_params = (header.size() - 1) / 2;
      std::vector<Series> mean_series(n_params);
      for (std::size_t i = 0; i < n_params; ++i)
        mean_series[i].name = header[1 + i];
      for (const auto& row : rows)
        for (std::size_t i = 0; i < n_params; ++i) {
          mean_series[i].x.push_back(row[0]);
          mean_series[i].y.push_back(row[1 + i]);
        }
      write_svg((fs::path(out) / "parameter_means.svg").string(),
                "parameter ensemble means", mean_series);

      for (std::size_t i = 0; i < n_params; ++i) {
        Series mid = mean_series[i], lo, hi;
        mid.name = "mean";
        lo.name = "mean - std";
        hi.name = "mean + std";
        for (std::size_t r = 0; r < rows.size(); ++r) {
          lo.x.push_back(rows[r][0]);
          hi.x.push_back(rows[r][0]);
          lo.y.push_back(rows[r][1 + i] - rows[r][1 + n_params + i]);
          hi.y.push_back(rows[r][1 + i] + rows[r][1 + n_params + i]);
        }
        write_svg(
            (fs::path(out) / ("parameter_" + std::to_string(i) + ".svg")).string(),
            "theta_" + std::to_string(i), {mid, lo, hi});
      }

      const auto rank_path = fs::path(run_dir) / "rank_history.csv";
      if (fs::exists(rank_path)) {
        std::vector<std::string> rh;
        const auto rrows = read_csv(rank_path.string(), rh);
        Series total;
        total.name = "total rank";
        for (const auto& row : rrows) {
          total.x.push_back(row[0]);
          total.y.push_back(row[1]);
        }
        write_svg((fs::path(out) / "rank_history.svg").string(), "rank history",
                  {total});
      }
      std::cout << "plots written to " << out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FilterError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
