#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlrenkf/dlr.hpp"
#include "test_support.hpp"

using namespace dlrenkf;
using namespace dlrenkf::dlr;
using dlrenkf::testing::CallableModel;
using dlrenkf::testing::random_matrix;

namespace {

std::vector<VariableBlock> single_block(Eigen::Index d) {
  return {VariableBlock{"state", 0, d}};
}

// cloud with anomalies of exact rank r
FullEnsemble rank_r_ensemble(Eigen::Index d, Eigen::Index p, int r,
                             Eigen::Index n_theta, std::uint64_t seed) {
  const Matrix u = linalg::orthonormalize(random_matrix(d, r, seed)).q;
  Matrix y = random_matrix(p, r, seed + 1);
  y.rowwise() -= y.colwise().mean();  // zero column means
  FullEnsemble ens;
  ens.states = u * y.transpose();
  ens.states.colwise() += Vector(random_matrix(d, 1, seed + 2));
  ens.params = random_matrix(n_theta, p, seed + 3);
  return ens;
}

ObservationModel identity_obs(Eigen::Index d, double gamma) {
  return ObservationModel(LinearOperator::identity(d),
                          NoiseCovariance::scaled_identity(d, gamma));
}

}  // namespace

TEST_CASE("reconstruct degenerate and rank-1 cases") {
  DlrEnsemble dlr;
  dlr.mean = Vector::Zero(3);
  dlr.det_modes = Matrix::Zero(3, 1);
  dlr.det_modes(0, 0) = 1.0;
  dlr.stoch_modes = Matrix(2, 1);
  dlr.stoch_modes << 1.0, -1.0;
  dlr.layout = {{"state", 0, 3, 1}};
  dlr.params = Matrix(0, 2);
  const auto full = reconstruct(dlr);
  CHECK(full.states(0, 0) == 1.0);
  CHECK(full.states(0, 1) == -1.0);
  CHECK(full.states.bottomRows(2).norm() == 0.0);

  dlr.stoch_modes.setZero();
  dlr.mean << 2.0, 3.0, 4.0;
  const auto collapsed = reconstruct(dlr);
  for (int p = 0; p < 2; ++p)
    CHECK((collapsed.states.col(p) - dlr.mean).norm() == 0.0);
}

TEST_CASE("factorise-reconstruct round trip") {
  const auto ens = rank_r_ensemble(12, 7, 3, 2, 5);
  const auto dlr = from_ensemble(ens, single_block(12), 3);
  dlr.validate();
  const auto back = reconstruct(dlr);
  CHECK((back.states - ens.states).norm() < 1e-10 * ens.states.norm());
  CHECK((back.params - ens.params).norm() == 0.0);
  // sample mean of the reconstruction equals the stored mean
  CHECK((back.states.rowwise().mean() - dlr.mean).norm() <
        1e-12 * (1.0 + dlr.mean.norm()));
}

TEST_CASE("bug_forecast zero drift leaves reconstruction unchanged") {
  const auto ens = rank_r_ensemble(10, 6, 3, 0, 11);
  const auto dlr = from_ensemble(ens, single_block(10), 3);
  CallableModel model(10, 0, [](double, const Matrix& x, const Matrix&) {
    return Matrix::Zero(x.rows(), x.cols()).eval();
  });
  BugOptions opts;
  opts.policy = RankPolicy::fixed(3);
  for (auto mode : {MeanMode::augmented, MeanMode::separate}) {
    opts.mean_mode = mode;
    const auto out = bug_forecast(dlr, model, 0.0, 0.01, opts);
    out.validate();
    const auto rec = reconstruct(out);
    const auto ref = reconstruct(dlr);
    CHECK((rec.states - ref.states).norm() < 1e-12 * ref.states.norm());
  }
}

TEST_CASE("bug_forecast constant drift moves only the mean") {
  const auto ens = rank_r_ensemble(8, 5, 2, 0, 13);
  const auto dlr = from_ensemble(ens, single_block(8), 2);
  const Vector c = random_matrix(8, 1, 17);
  CallableModel model(8, 0, [&](double, const Matrix& x, const Matrix&) {
    Matrix f(x.rows(), x.cols());
    f.colwise() = c;
    return f;
  });
  BugOptions opts;
  opts.policy = RankPolicy::fixed(2);
  const double dt = 0.05;
  const auto out = bug_forecast(dlr, model, 0.0, dt, opts);
  CHECK((out.mean - (dlr.mean + dt * c)).norm() < 1e-12 * out.mean.norm());
  const Matrix zm_before = dlr.det_modes * dlr.stoch_modes.transpose();
  const Matrix zm_after = out.det_modes * out.stoch_modes.transpose();
  CHECK((zm_after - zm_before).norm() < 1e-12 * (1.0 + zm_before.norm()));
}

TEST_CASE("bug_forecast linear drift is exact at sufficient rank") {
  const Eigen::Index d = 14, p = 9;
  const int r = 3;
  const auto ens = rank_r_ensemble(d, p, r, 0, 19);
  const auto dlr = from_ensemble(ens, single_block(d), r);
  const Matrix a = random_matrix(d, d, 23) / double(d);
  CallableModel model(d, 0, [&](double, const Matrix& x, const Matrix&) {
    return Matrix(a * x);
  });
  BugOptions opts;
  opts.policy = RankPolicy::fixed(r);
  const double dt = 0.02;

  // one step against the dense Euler oracle
  for (auto mode : {MeanMode::augmented, MeanMode::separate}) {
    opts.mean_mode = mode;
    const auto out = bug_forecast(dlr, model, 0.0, dt, opts);
    const Matrix euler = ens.states + dt * a * ens.states;
    const auto rec = reconstruct(out);
    CHECK((rec.states - euler).norm() < 1e-10 * euler.norm());
  }

  // 100 steps stay within 1e-6 of the dense trajectory
  opts.mean_mode = MeanMode::augmented;
  DlrEnsemble cur = dlr;
  Matrix dense = ens.states;
  for (int s = 0; s < 100; ++s) {
    cur = bug_forecast(cur, model, s * dt, dt, opts);
    dense += dt * a * dense;
  }
  const auto rec = reconstruct(cur);
  CHECK((rec.states - dense).norm() < 1e-6 * dense.norm());
}

TEST_CASE("truncate lossless at exact rank") {
  const Eigen::Index d = 10, p = 7;
  const Matrix u_bar = linalg::orthonormalize(random_matrix(d, 4, 29)).q;
  Matrix y_pre = random_matrix(p, 4, 31);
  y_pre.rowwise() -= y_pre.colwise().mean();
  const Matrix y_bar = std::sqrt(double(p)) *
      linalg::orthonormalize_dropping(y_pre / std::sqrt(double(p))).q;
  Matrix s_tilde = Matrix::Zero(4, y_bar.cols());
  s_tilde.topLeftCorner(2, std::min<Eigen::Index>(2, y_bar.cols())) =
      random_matrix(2, std::min<Eigen::Index>(2, y_bar.cols()), 37);

  const auto res = truncate(u_bar, s_tilde, y_bar, single_block(d),
                            RankPolicy::fixed(2), {2});
  const Matrix rebuilt = res.det_modes * res.stoch_modes.transpose();
  const Matrix target = u_bar * s_tilde * y_bar.transpose();
  CHECK((rebuilt - target).norm() < 1e-12 * (1.0 + target.norm()));
  CHECK(res.discarded_energy[0] < 1e-24);
  // zero column means inherited
  for (Eigen::Index j = 0; j < res.stoch_modes.cols(); ++j)
    CHECK(std::abs(res.stoch_modes.col(j).mean()) <
          1e-12 * (1.0 + res.stoch_modes.col(j).norm()));
}

TEST_CASE("per-variable truncation beats global truncation on scale-split data") {
  // block A carries four O(1e3) modes, block u two O(1e-3) modes; truncating
  // globally at four modes sacrifices the whole small block, per-variable
  // truncation at two modes per block keeps it exactly
  const Eigen::Index da = 12, du = 12, p = 9;
  const Eigen::Index d = da + du;
  std::vector<VariableBlock> blocks{{"A", 0, da}, {"u", da, d}};

  Matrix ya = random_matrix(p, 4, 41);
  ya.rowwise() -= ya.colwise().mean();
  Matrix yu = random_matrix(p, 2, 43);
  yu.rowwise() -= yu.colwise().mean();
  const Matrix ua = linalg::orthonormalize(random_matrix(da, 4, 47)).q;
  const Matrix uu = linalg::orthonormalize(random_matrix(du, 2, 53)).q;

  Matrix full = Matrix::Zero(d, p);
  full.topRows(da) = 1e3 * ua * ya.transpose();
  full.bottomRows(du) = 1e-3 * uu * yu.transpose();

  // factor the full matrix into (U_bar, S, Y_bar) form
  const Matrix u_bar = linalg::orthonormalize_dropping(full).q;
  const Matrix y_bar = std::sqrt(double(p)) *
      linalg::orthonormalize_dropping(full.transpose() / std::sqrt(double(p))).q;
  const Matrix s = u_bar.transpose() * full * y_bar / double(p);
  REQUIRE((u_bar * s * y_bar.transpose() - full).norm() < 1e-9 * full.norm());

  const int keep = 2;
  const auto per_var = truncate(u_bar, s, y_bar, blocks,
                                RankPolicy::fixed(keep), {keep, keep});
  const auto global = truncate(u_bar, s, y_bar, {{"all", 0, d}},
                               RankPolicy::fixed(2 * keep), {2 * keep});

  const Matrix rec_pv = per_var.det_modes * per_var.stoch_modes.transpose();
  const Matrix rec_gl = global.det_modes * global.stoch_modes.transpose();
  const double err_pv = (rec_pv.bottomRows(du) - full.bottomRows(du)).norm();
  const double err_gl = (rec_gl.bottomRows(du) - full.bottomRows(du)).norm();
  const double u_norm = full.bottomRows(du).norm();
  CHECK(err_pv < 1e-8 * u_norm);
  CHECK(err_gl > 0.1 * u_norm);   // global truncation damages the small block
  CHECK(err_gl > 1e3 * err_pv);
}

TEST_CASE("truncate adaptive with vanishing threshold keeps everything") {
  const Eigen::Index d = 8, p = 10;
  const Matrix u_bar = linalg::orthonormalize(random_matrix(d, 6, 59)).q;
  Matrix y_pre = random_matrix(p, 6, 61);
  y_pre.rowwise() -= y_pre.colwise().mean();
  const Matrix y_bar = std::sqrt(double(p)) *
      linalg::orthonormalize_dropping(y_pre / std::sqrt(double(p))).q;
  const Matrix s_tilde = random_matrix(6, y_bar.cols(), 67);

  const auto res = truncate(u_bar, s_tilde, y_bar, single_block(d),
                            RankPolicy::adaptive(1e-300, 1), {3});
  CHECK(res.layout[0].rank == 6);  // capped at 2 * prev_rank
  CHECK(res.discarded_energy[0] == 0.0);
}

TEST_CASE("dlr_analyze degenerate modes is identity") {
  DlrEnsemble dlr;
  dlr.mean = Vector::Constant(4, 1.5);
  dlr.det_modes = Matrix::Zero(4, 2);
  dlr.det_modes(0, 0) = 1.0;
  dlr.det_modes(1, 1) = 1.0;
  dlr.stoch_modes = Matrix::Zero(5, 2);
  dlr.layout = {{"state", 0, 4, 2}};
  dlr.params = random_matrix(1, 5, 71);
  const auto obs = identity_obs(4, 0.5);
  const Matrix xi = random_matrix(4, 5, 73);
  for (auto v : {FilterVariant::venkf, FilterVariant::denkf, FilterVariant::senkf}) {
    const auto out = dlr_analyze(dlr, obs, v, Vector::Ones(4), 0.1, xi);
    CHECK((out.mean - dlr.mean).norm() == 0.0);
    CHECK(out.stoch_modes.norm() == 0.0);
    CHECK((out.params - dlr.params).norm() == 0.0);
  }
}

TEST_CASE("dlr_analyze at full rank equals full-order analyze") {
  const Eigen::Index d = 15, p = 6;
  const int r = static_cast<int>(p) - 1;
  const auto ens = rank_r_ensemble(d, p, r, 2, 79);
  const auto dlr = from_ensemble(ens, single_block(d), r);
  // factorisation is exact at rank P-1
  CHECK((reconstruct(dlr).states - ens.states).norm() < 1e-10 * ens.states.norm());

  Matrix h = random_matrix(4, d, 83);
  Matrix g = random_matrix(4, 4, 89);
  g = g * g.transpose() + Matrix::Identity(4, 4);
  const ObservationModel obs(LinearOperator::dense(h), NoiseCovariance::dense(g));
  const Vector dz = random_matrix(4, 1, 97);
  const double dt = 0.04;
  const Matrix xi = random_matrix(4, p, 101);

  for (auto v : {FilterVariant::venkf, FilterVariant::denkf, FilterVariant::senkf}) {
    const auto lr = dlr_analyze(dlr, obs, v, dz, dt, xi);
    lr.validate();
    CHECK((lr.det_modes - dlr.det_modes).norm() == 0.0);  // modes never move
    const auto full = analyze(reconstruct(dlr), obs, v, dz, dt, xi);
    const auto rec = reconstruct(lr);
    CHECK((rec.states - full.states).norm() < 1e-10 * full.states.norm());
    CHECK((rec.params - full.params).norm() < 1e-10 * (1.0 + full.params.norm()));
  }
}

TEST_CASE("dlr_analyze assimilates only the det-mode component of the data") {
  const Eigen::Index d = 12, p = 8;
  const int r = 3;
  const auto ens = rank_r_ensemble(d, p, r, 0, 103);
  const auto dlr = from_ensemble(ens, single_block(d), r);
  const auto obs = identity_obs(d, 1.0);
  const double dt = 0.05;
  const Matrix xi = Matrix::Zero(d, p);

  const Vector dz = random_matrix(d, 1, 107);
  const Vector dz_proj = dlr.det_modes * (dlr.det_modes.transpose() * dz);
  for (auto v : {FilterVariant::denkf, FilterVariant::senkf}) {
    const auto full = dlr_analyze(dlr, obs, v, dz, dt, xi);
    const auto proj = dlr_analyze(dlr, obs, v, dz_proj, dt, xi);
    CHECK((full.mean - proj.mean).norm() < 1e-12 * (1.0 + full.mean.norm()));
    CHECK((full.stoch_modes - proj.stoch_modes).norm() <
          1e-12 * (1.0 + full.stoch_modes.norm()));
  }
}

TEST_CASE("dlr_step equals manual composition and matches EnKF when lossless") {
  // rank P-1 spans the whole particle space, so the BUG forecast reproduces
  // the Euler map exactly and the analysis matches the full-order one
  const Eigen::Index d = 13, p = 7;
  const int r = static_cast<int>(p) - 1;
  const auto ens = rank_r_ensemble(d, p, r, 2, 109);
  const auto dlr = from_ensemble(ens, single_block(d), r);
  const Matrix a = random_matrix(d, d, 113) / double(2 * d);
  const Matrix b = random_matrix(d, 2, 127) / double(d);
  CallableModel model(d, 2, [&](double, const Matrix& x, const Matrix& th) {
    return Matrix(a * x + b * th);
  });
  const auto obs = identity_obs(d, 0.7);
  const Vector dz = random_matrix(d, 1, 131);
  const double dt = 0.01;
  BugOptions opts;
  opts.policy = RankPolicy::fixed(r);
  const std::uint64_t seed = 7;

  for (auto v : {FilterVariant::venkf, FilterVariant::denkf, FilterVariant::senkf}) {
    const auto stepped = dlr_step(dlr, model, obs, v, dz, 0.0, dt, opts, seed, 3);
    const auto fc = bug_forecast(dlr, model, 0.0, dt, opts);
    const Matrix xi = draw_analysis_noise(seed, 3, d, p, v);
    const auto manual = dlr_analyze(fc, obs, v, dz, dt, xi);
    CHECK((reconstruct(stepped).states - reconstruct(manual).states).norm() == 0.0);

    // lossless rank makes the DLR step match the full-order step
    const auto full = step(reconstruct(dlr), model, obs, v, dz, 0.0, dt, seed, 3);
    const auto rec = reconstruct(stepped);
    CHECK((rec.states - full.states).norm() < 1e-8 * full.states.norm());
    CHECK((rec.params - full.params).norm() < 1e-8 * (1.0 + full.params.norm()));
  }
}

TEST_CASE("rank-sufficient DLR trajectory tracks the EnKF over 100 steps") {
  const Eigen::Index d = 12, p = 6;
  const int r = static_cast<int>(p) - 1;
  const auto ens0 = rank_r_ensemble(d, p, 3, 2, 137);
  const Matrix a = random_matrix(d, d, 139) / double(2 * d);
  const Matrix b = random_matrix(d, 2, 149) / double(d);
  CallableModel model(d, 2, [&](double, const Matrix& x, const Matrix& th) {
    return Matrix(a * x + b * th);
  });
  const auto obs = identity_obs(d, 0.5);
  const double dt = 0.02;
  BugOptions opts;
  opts.policy = RankPolicy::fixed(r);
  const std::uint64_t seed = 21;

  FullEnsemble full = ens0;
  DlrEnsemble lr = from_ensemble(ens0, single_block(d), r);
  NoiseStream obs_noise(3, NoiseDomain::observation);
  for (int s = 0; s < 100; ++s) {
    const Vector dz = dt * Vector(random_matrix(d, 1, 1000 + s)) +
                      std::sqrt(dt) * 0.1 * obs_noise.normal_vector(d);
    full = step(full, model, obs, FilterVariant::venkf, dz, s * dt, dt, seed, s);
    RankRecord rec;
    lr = dlr_step(lr, model, obs, FilterVariant::venkf, dz, s * dt, dt, opts,
                  seed, s, &rec);
    lr.validate();
  }
  const auto rec = reconstruct(lr);
  CHECK((rec.states - full.states).norm() < 1e-6 * full.states.norm());
  CHECK((rec.params - full.params).norm() < 1e-6 * (1.0 + full.params.norm()));
}

TEST_CASE("covariance domination under truncation") {
  const auto ens = rank_r_ensemble(10, 8, 6, 0, 151);
  const auto stats = sample_stats(ens);
  Eigen::JacobiSVD<Matrix> svd(stats.anomalies.topRows(10));
  const Vector sv = svd.singularValues();
  double full_norm2 = 0.0;
  for (Eigen::Index j = 0; j < sv.size(); ++j)
    full_norm2 += std::pow(sv[j], 4);

  double prev = 0.0;
  for (int r = 1; r <= 6; ++r) {
    const auto dlr = from_ensemble(ens, single_block(10), r);
    const Matrix p_y = dlr.stoch_modes.transpose() * dlr.stoch_modes / 7.0;
    const Matrix p_hat = dlr.det_modes * p_y * dlr.det_modes.transpose();
    const double n = p_hat.norm();
    CHECK(n >= prev - 1e-12);
    CHECK(n <= std::sqrt(full_norm2) / 7.0 + 1e-10);
    prev = n;
  }
}

TEST_CASE("degenerate start bootstraps through the first forecast") {
  const Eigen::Index d = 9, p = 6;
  const Vector mean0 = Vector::LinSpaced(d, 0.0, 1.0);
  const Matrix params = random_matrix(2, p, 157);
  auto dlr = from_identical(mean0, params, single_block(d), 3);
  dlr.validate();

  const Matrix b = random_matrix(d, 2, 163);
  CallableModel model(d, 2, [&](double, const Matrix& x, const Matrix& th) {
    return Matrix(-0.3 * x + b * th);
  });
  BugOptions opts;
  opts.policy = RankPolicy::fixed(3);
  const auto out = bug_forecast(dlr, model, 0.0, 0.05, opts);
  out.validate();
  // the drift anomaly induced by the parameter spread enters the modes
  CHECK(out.stoch_modes.norm() > 0.0);
  const Matrix euler = reconstruct(dlr).states +
                       0.05 * eval_drift(model, 0.0, reconstruct(dlr).states, params);
  CHECK((reconstruct(out).states - euler).norm() < 1e-10 * euler.norm());
}
