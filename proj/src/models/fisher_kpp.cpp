#include "dlrenkf/models/fisher_kpp.hpp"

#include <cmath>
#include <map>

#include "dlrenkf/errors.hpp"

namespace dlrenkf::models {

Vector PolarGrid::quadrature_weights() const {
  Vector w(size());
  for (int j = 0; j < n_alpha; ++j) {
    const double da = alpha_edge(j + 1) - alpha_edge(j);
    for (int i = 0; i < n_r; ++i) {
      const double r0 = r_edge(i), r1 = r_edge(i + 1);
      w[index(i, j)] = 0.5 * (r1 * r1 - r0 * r0) * da;
    }
  }
  return w;
}

KlField build_kl_field(const PolarGrid& grid, double a, double b, double c,
                       int n_theta) {
  const Eigen::Index d = grid.size();
  if (d < n_theta) throw ConfigError("build_kl_field: grid smaller than n_theta");

  Matrix cov(d, d);
  for (int j2 = 0; j2 < grid.n_alpha; ++j2)
    for (int i2 = 0; i2 < grid.n_r; ++i2) {
      const Eigen::Index col = grid.index(i2, j2);
      const double x1b = grid.x1(i2, j2), x2b = grid.x2(i2, j2);
      for (int j1 = 0; j1 < grid.n_alpha; ++j1)
        for (int i1 = 0; i1 < grid.n_r; ++i1) {
          const Eigen::Index row = grid.index(i1, j1);
          const double dx = grid.x1(i1, j1) - x1b;
          const double dy = grid.x2(i1, j1) - x2b;
          cov(row, col) = a * std::exp(-std::sqrt(dx * dx + dy * dy) /
                                       (2.0 * b * b));
        }
      cov(col, col) += c;
    }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  KlField field;
  field.eigenvalues.resize(n_theta);
  field.eigenvectors.resize(d, n_theta);
  for (int k = 0; k < n_theta; ++k) {
    field.eigenvalues[k] = eig.eigenvalues()[d - 1 - k];
    Vector v = eig.eigenvectors().col(d - 1 - k);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(v[i]) > 1e-8) {
        if (v[i] < 0.0) v = -v;
        break;
      }
    }
    field.eigenvectors.col(k) = v;
  }

  double denom = 0.0;
  for (int k = 0; k < n_theta; ++k)
    denom += std::sqrt(std::max(field.eigenvalues[k], 0.0)) *
             field.eigenvectors.col(k).cwiseAbs().maxCoeff();
  field.hypercube_bound = field.base_value / denom;
  return field;
}

Vector nu(const KlField& field, const Vector& theta) {
  Vector out = Vector::Constant(field.eigenvectors.rows(), field.base_value);
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    out += theta[k] * std::sqrt(std::max(field.eigenvalues[k], 0.0)) *
           field.eigenvectors.col(k);
  return out;
}

Vector initial_condition(const PolarGrid& grid) {
  Vector u(grid.size());
  for (int j = 0; j < grid.n_alpha; ++j)
    for (int i = 0; i < grid.n_r; ++i) {
      const double x1 = grid.x1(i, j), x2 = grid.x2(i, j);
      u[grid.index(i, j)] =
          std::exp(-(x1 - 1.5) * (x1 - 1.5) - 50.0 * x2 * x2);
    }
  return u;
}

Matrix partial_observation_matrix(const PolarGrid& grid) {
  const double width = 0.05;
  const double prefactor = 30.0 / (width * M_PI);
  const double rhos[2] = {1.0, 1.5};
  const double alphas[4] = {M_PI / 2.0, M_PI / 3.0, M_PI / 4.0, M_PI / 6.0};
  const Vector w = grid.quadrature_weights();

  Matrix h(8, grid.size());
  int row = 0;
  for (double rho : rhos)
    for (double alpha : alphas) {
      const double cx = rho * std::cos(alpha), cy = rho * std::sin(alpha);
      for (int j = 0; j < grid.n_alpha; ++j)
        for (int i = 0; i < grid.n_r; ++i) {
          const double dx = grid.x1(i, j) - cx, dy = grid.x2(i, j) - cy;
          h(row, grid.index(i, j)) =
              w[grid.index(i, j)] * prefactor *
              std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        }
      ++row;
    }
  return h;
}

FisherKpp::FisherKpp(PolarGrid grid, int n_theta, double a, double b, double c,
                     double reaction)
    : grid_(grid),
      n_theta_(n_theta),
      reaction_(reaction),
      field_(build_kl_field(grid, a, b, c, n_theta)) {}

void FisherKpp::drift_single(const Eigen::Ref<const Vector>& u,
                             const Vector& nu_vals,
                             Eigen::Ref<Vector> out) const {
  const int nr = grid_.n_r, na = grid_.n_alpha;
  const double dr = grid_.dr(), da = grid_.dalpha();
  for (int j = 0; j < na; ++j) {
    const double daj = grid_.alpha_edge(j + 1) - grid_.alpha_edge(j);
    for (int i = 0; i < nr; ++i) {
      const Eigen::Index idx = grid_.index(i, j);
      const double r = grid_.radius(i);
      const double r0 = grid_.r_edge(i), r1 = grid_.r_edge(i + 1);
      const double vol = 0.5 * (r1 * r1 - r0 * r0) * daj;
      // net flux of nu grad(u) through the cell faces (Neumann walls: zero)
      double flux = 0.0;
      if (i + 1 < nr) {
        const Eigen::Index right = grid_.index(i + 1, j);
        flux += r1 * daj * 0.5 * (nu_vals[idx] + nu_vals[right]) *
                (u[right] - u[idx]) / dr;
      }
      if (i > 0) {
        const Eigen::Index left = grid_.index(i - 1, j);
        flux -= r0 * daj * 0.5 * (nu_vals[idx] + nu_vals[left]) *
                (u[idx] - u[left]) / dr;
      }
      if (j + 1 < na) {
        const Eigen::Index up = grid_.index(i, j + 1);
        flux += (r1 - r0) / (r * da) * 0.5 * (nu_vals[idx] + nu_vals[up]) *
                (u[up] - u[idx]);
      }
      if (j > 0) {
        const Eigen::Index down = grid_.index(i, j - 1);
        flux -= (r1 - r0) / (r * da) * 0.5 * (nu_vals[idx] + nu_vals[down]) *
                (u[idx] - u[down]);
      }
      out[idx] = flux / vol + reaction_ * u[idx] * (1.0 - u[idx]);
    }
  }
}

void FisherKpp::drift(double, const Matrix& states, const Matrix& params,
                      Matrix& out) const {
  out.resize(states.rows(), states.cols());
  for (Eigen::Index p = 0; p < states.cols(); ++p) {
    const Vector nu_vals = nu(field_, params.col(p));
    if (nu_vals.minCoeff() < 0.0)
      throw NegativeDiffusion("fisher-kpp: nu < 0 for particle " +
                              std::to_string(p));
    drift_single(states.col(p), nu_vals, out.col(p));
  }
}

void FisherKpp::drift_rows(double, const std::vector<Eigen::Index>& rows,
                           const StateRowFn& state_row, const Matrix& params,
                           Matrix& out) const {
  const Eigen::Index particles = params.cols();
  const int nr = grid_.n_r, na = grid_.n_alpha;
  const double dr = grid_.dr(), da = grid_.dalpha();
  out.resize(static_cast<Eigen::Index>(rows.size()), particles);

  // nu row values per needed node, shared across rows via a small cache
  std::map<Eigen::Index, Eigen::RowVectorXd> nu_cache;
  auto nu_row = [&](Eigen::Index node) -> const Eigen::RowVectorXd& {
    auto it = nu_cache.find(node);
    if (it != nu_cache.end()) return it->second;
    Eigen::RowVectorXd vals =
        Eigen::RowVectorXd::Constant(particles, field_.base_value);
    for (int k = 0; k < n_theta_; ++k)
      vals += std::sqrt(std::max(field_.eigenvalues[k], 0.0)) *
              field_.eigenvectors(node, k) * params.row(k);
    return nu_cache.emplace(node, std::move(vals)).first->second;
  };
  std::map<Eigen::Index, Eigen::RowVectorXd> u_cache;
  auto u_row = [&](Eigen::Index node) -> const Eigen::RowVectorXd& {
    auto it = u_cache.find(node);
    if (it != u_cache.end()) return it->second;
    return u_cache.emplace(node, state_row(node)).first->second;
  };

  for (std::size_t r_out = 0; r_out < rows.size(); ++r_out) {
    const Eigen::Index idx = rows[r_out];
    const int i = static_cast<int>(idx % nr);
    const int j = static_cast<int>(idx / nr);
    const double r = grid_.radius(i);
    const double r0 = grid_.r_edge(i), r1 = grid_.r_edge(i + 1);
    const double daj = grid_.alpha_edge(j + 1) - grid_.alpha_edge(j);
    const double vol = 0.5 * (r1 * r1 - r0 * r0) * daj;
    const auto& uc = u_row(idx);
    const auto& nuc = nu_row(idx);

    Eigen::RowVectorXd flux = Eigen::RowVectorXd::Zero(particles);
    if (i + 1 < nr) {
      const Eigen::Index right = grid_.index(i + 1, j);
      flux += (r1 * daj / dr) *
              (0.5 * (nuc + nu_row(right))).cwiseProduct(u_row(right) - uc);
    }
    if (i > 0) {
      const Eigen::Index left = grid_.index(i - 1, j);
      flux -= (r0 * daj / dr) *
              (0.5 * (nuc + nu_row(left))).cwiseProduct(uc - u_row(left));
    }
    if (j + 1 < na) {
      const Eigen::Index up = grid_.index(i, j + 1);
      flux += ((r1 - r0) / (r * da)) *
              (0.5 * (nuc + nu_row(up))).cwiseProduct(u_row(up) - uc);
    }
    if (j > 0) {
      const Eigen::Index down = grid_.index(i, j - 1);
      flux -= ((r1 - r0) / (r * da)) *
              (0.5 * (nuc + nu_row(down))).cwiseProduct(uc - u_row(down));
    }
    out.row(r_out) =
        flux / vol +
        reaction_ * uc.cwiseProduct(Eigen::RowVectorXd::Ones(particles) - uc);
  }
}

}  // namespace dlrenkf::models
