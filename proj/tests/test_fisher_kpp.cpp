#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlrenkf/errors.hpp"
#include "dlrenkf/models/fisher_kpp.hpp"
#include "test_support.hpp"

using namespace dlrenkf;
using namespace dlrenkf::models;
using dlrenkf::testing::random_matrix;

namespace {

const Vector kThetaTrue = [] {
  Vector t(6);
  t << 0.271, 0.266, 0.504, -0.111, -0.014, -0.086;
  return t;
}();

PolarGrid small_grid() {
  PolarGrid g;
  g.n_r = 8;
  g.n_alpha = 10;
  return g;
}

}  // namespace

TEST_CASE("kl field with a = 0 is a scaled identity") {
  const auto g = small_grid();
  const auto f = build_kl_field(g, 0.0, 1.0, 0.1, 4);
  for (int k = 0; k < 4; ++k)
    CHECK(f.eigenvalues[k] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("kl field eigenvalue ratio tends to one as c grows") {
  const auto g = small_grid();
  double prev_ratio = 1e9;
  for (double c : {1.0, 1e3, 1e6}) {
    const auto f = build_kl_field(g, 1.0, 1.0, c, 4);
    const double ratio = f.eigenvalues[0] / f.eigenvalues[3];
    CHECK(ratio < prev_ratio + 1e-12);
    prev_ratio = ratio;
  }
  CHECK(prev_ratio < 1.001);
}

TEST_CASE("kl field on three collinear nodes matches a dense eigensolve") {
  PolarGrid g;
  g.n_r = 3;
  g.n_alpha = 1;  // nodes (1,0), (1.25,0), (1.5,0)
  const auto f = build_kl_field(g, 1.0, 1.0, 0.0, 3);

  Matrix c(3, 3);
  const double x[3] = {1.0, 1.25, 1.5};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      c(i, j) = std::exp(-std::abs(x[i] - x[j]) / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
  for (int k = 0; k < 3; ++k)
    CHECK(f.eigenvalues[k] ==
          doctest::Approx(eig.eigenvalues()[2 - k]).epsilon(1e-10));
}

TEST_CASE("kl eigenvector sign convention and normalisation") {
  const auto g = small_grid();
  const auto f = build_kl_field(g, 1.0, 1.0, 0.1, 5);
  for (int k = 0; k < 5; ++k) {
    CHECK(f.eigenvectors.col(k).norm() == doctest::Approx(1.0).epsilon(1e-12));
    for (Eigen::Index i = 0; i < f.eigenvectors.rows(); ++i) {
      if (std::abs(f.eigenvectors(i, k)) > 1e-8) {
        CHECK(f.eigenvectors(i, k) > 0.0);
        break;
      }
    }
  }
  for (int k = 1; k < 5; ++k) CHECK(f.eigenvalues[k] <= f.eigenvalues[k - 1]);
}

TEST_CASE("nu at zero parameters is the constant base value") {
  const auto g = small_grid();
  const auto f = build_kl_field(g);
  const Vector v = nu(f, Vector::Zero(6));
  CHECK((v.array() - std::sqrt(2.0)).abs().maxCoeff() < 1e-14);
}

TEST_CASE("nu stays nonnegative on the hypercube corner") {
  const auto g = small_grid();
  const auto f = build_kl_field(g);
  CHECK(f.hypercube_bound > 0.0);
  Vector corner = Vector::Constant(6, f.hypercube_bound);
  corner[3] = -f.hypercube_bound;  // mixed-sign corner
  CHECK(nu(f, corner).minCoeff() >= -1e-12);
}

TEST_CASE("nu at theta-true matches direct summation") {
  const auto g = small_grid();
  const auto f = build_kl_field(g);
  CHECK(kThetaTrue.cwiseAbs().maxCoeff() < f.hypercube_bound);
  const Vector v = nu(f, kThetaTrue);
  CHECK(v.minCoeff() > 0.0);
  const Eigen::Index node = 13;
  double direct = std::sqrt(2.0);
  for (int k = 0; k < 6; ++k)
    direct += kThetaTrue[k] * std::sqrt(f.eigenvalues[k]) *
              f.eigenvectors(node, k);
  CHECK(v[node] == doctest::Approx(direct).epsilon(1e-13));
}

TEST_CASE("drift vanishes at the reaction fixed points") {
  const auto g = small_grid();
  FisherKpp model(g);
  const Eigen::Index d = g.size();
  Matrix params(6, 2);
  params.col(0).setZero();
  params.col(1) = kThetaTrue;
  for (double level : {0.0, 1.0}) {
    const Matrix u = Matrix::Constant(d, 2, level);
    const Matrix f = eval_drift(model, 0.0, u, params);
    CHECK(f.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("drift at the constant half state is the pure reaction") {
  const auto g = small_grid();
  FisherKpp model(g);
  Matrix params(6, 1);
  params.col(0) = kThetaTrue;
  const Matrix u = Matrix::Constant(g.size(), 1, 0.5);
  const Matrix f = eval_drift(model, 0.0, u, params);
  CHECK((f.array() - 18.75).abs().maxCoeff() < 1e-10);
}

TEST_CASE("drift aborts on negative diffusion") {
  const auto g = small_grid();
  FisherKpp model(g);
  const auto& field = model.field();
  Matrix params = Matrix::Zero(6, 1);
  params(0, 0) = -20.0 * field.hypercube_bound;
  const Matrix u = Matrix::Constant(g.size(), 1, 0.5);
  Matrix out;
  CHECK_THROWS_AS(model.drift(0.0, u, params, out), NegativeDiffusion);
}

TEST_CASE("diffusion is discretely conservative") {
  const auto g = small_grid();
  FisherKpp model(g, 6, 1.0, 1.0, 0.1, 0.0);  // reaction off
  const Vector w = g.quadrature_weights();
  Matrix params(6, 1);
  params.col(0) = 0.5 * kThetaTrue;
  for (std::uint64_t seed : {5u, 9u}) {
    const Matrix u = random_matrix(g.size(), 1, seed);
    const Matrix f = eval_drift(model, 0.0, u, params);
    CHECK(std::abs(w.dot(f.col(0))) < 1e-10 * u.norm());
  }
}

TEST_CASE("drift_rows agrees with the full drift") {
  const auto g = small_grid();
  FisherKpp model(g);
  const Eigen::Index d = g.size();
  const Matrix u = random_matrix(d, 5, 31);
  Matrix params = 0.05 * random_matrix(6, 5, 37);
  const Matrix full = eval_drift(model, 0.0, u, params);

  std::vector<Eigen::Index> rows{0, 7, 11, d / 2, d - 1};
  Matrix out;
  model.drift_rows(0.0, rows,
                   [&](Eigen::Index i) { return Eigen::RowVectorXd(u.row(i)); },
                   params, out);
  for (std::size_t r = 0; r < rows.size(); ++r)
    CHECK((out.row(r) - full.row(rows[r])).norm() < 1e-12 * (1.0 + full.row(rows[r]).norm()));
}

TEST_CASE("initial condition peaks at (1.5, 0) and dies at (0, 1.5)") {
  PolarGrid g;  // default 18 x 30
  const Vector u = initial_condition(g);
  CHECK(u[g.index(g.n_r - 1, 0)] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(u[g.index(g.n_r - 1, g.n_alpha - 1)] < 1e-40);
  Eigen::Index argmax = 0;
  u.maxCoeff(&argmax);
  CHECK(argmax == g.index(g.n_r - 1, 0));
  // direct formula check on every node
  for (int j = 0; j < g.n_alpha; ++j)
    for (int i = 0; i < g.n_r; ++i) {
      const double x1 = g.x1(i, j), x2 = g.x2(i, j);
      CHECK(u[g.index(i, j)] ==
            doctest::Approx(std::exp(-(x1 - 1.5) * (x1 - 1.5) - 50 * x2 * x2))
                .epsilon(1e-13));
    }
}

TEST_CASE("partial observation operator") {
  PolarGrid g;  // default 18 x 30 = 540 nodes
  const Matrix h = partial_observation_matrix(g);
  CHECK(h.rows() == 8);
  CHECK(h.cols() == g.size());

  // zero field maps to zero, constant field to positive functionals
  CHECK((h * Vector::Zero(g.size())).norm() == 0.0);
  const Vector ones_response = h * Vector::Ones(g.size());
  CHECK(ones_response.minCoeff() > 0.0);

  // refined-grid quadrature oracle for the constant-one field
  PolarGrid fine;
  fine.n_r = 4 * (g.n_r - 1) + 1;
  fine.n_alpha = 4 * (g.n_alpha - 1) + 1;
  const Vector fine_response =
      partial_observation_matrix(fine) * Vector::Ones(fine.size());
  for (int r = 0; r < 8; ++r)
    CHECK(ones_response[r] ==
          doctest::Approx(fine_response[r]).epsilon(0.05));

  // kernel peaks (rows divided by the cell weights) sit at the node nearest
  // each center
  const Vector w = g.quadrature_weights();
  const double rhos[2] = {1.0, 1.5};
  const double alphas[4] = {M_PI / 2, M_PI / 3, M_PI / 4, M_PI / 6};
  int row = 0;
  for (double rho : rhos)
    for (double alpha : alphas) {
      Eigen::Index arg = 0;
      Vector kernel = h.row(row).transpose().cwiseQuotient(w);
      kernel.maxCoeff(&arg);
      const int i = static_cast<int>(arg % g.n_r);
      const int j = static_cast<int>(arg / g.n_r);
      CHECK(std::abs(g.radius(i) - rho) <= 0.5 * g.dr() + 1e-12);
      CHECK(std::abs(g.angle(j) - alpha) <= 0.5 * g.dalpha() + 1e-12);
      ++row;
    }
}

TEST_CASE("euler solution stays within bounds over the full horizon") {
  PolarGrid g;  // full-size grid
  FisherKpp model(g);
  Matrix params(6, 1);
  params.col(0) = kThetaTrue;
  const double dt = 4.4e-5;
  const int steps = 3500;
  Matrix u = initial_condition(g);
  for (int s = 0; s < steps; ++s) {
    u += dt * eval_drift(model, s * dt, u, params);
    if (s % 500 == 0) {
      CHECK(u.minCoeff() > -0.01);
      CHECK(u.maxCoeff() < 1.01);
    }
  }
  CHECK(u.minCoeff() > -0.01);
  CHECK(u.maxCoeff() < 1.01);
  // the front has traversed most of the domain by T = 0.154
  CHECK(u(g.index(g.n_r - 1, g.n_alpha - 1), 0) > 0.5);
}
