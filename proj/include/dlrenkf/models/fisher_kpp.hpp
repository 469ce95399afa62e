#pragma once

#include "dlrenkf/forward_model.hpp"

namespace dlrenkf::models {

// Structured polar grid on the quarter annulus 1 <= r <= 1.5, 0 <= alpha <=
// pi/2. Node (i, j) sits at radius r_i = 1 + i dr and angle alpha_j = j da;
// flat index is i + j * n_r.
struct PolarGrid {
  int n_r = 18;
  int n_alpha = 30;
  double r_min = 1.0;
  double r_max = 1.5;
  double alpha_max = 1.5707963267948966;

  double dr() const { return n_r > 1 ? (r_max - r_min) / (n_r - 1) : r_max - r_min; }
  double dalpha() const { return n_alpha > 1 ? alpha_max / (n_alpha - 1) : alpha_max; }
  Eigen::Index size() const { return Eigen::Index(n_r) * n_alpha; }
  Eigen::Index index(int i, int j) const { return i + Eigen::Index(j) * n_r; }
  double radius(int i) const { return r_min + i * dr(); }
  double angle(int j) const { return j * dalpha(); }
  double x1(int i, int j) const { return radius(i) * std::cos(angle(j)); }
  double x2(int i, int j) const { return radius(i) * std::sin(angle(j)); }

  // vertex-centred cell edges: half cells at the walls
  double r_edge(int i) const {
    if (i <= 0) return r_min;
    if (i >= n_r) return r_max;
    return r_min + (i - 0.5) * dr();
  }
  double alpha_edge(int j) const {
    if (j <= 0) return 0.0;
    if (j >= n_alpha) return alpha_max;
    return (j - 0.5) * dalpha();
  }

  // exact annular cell areas; pair with the flux-form divergence so the
  // weighted drift telescopes to the boundary fluxes
  Vector quadrature_weights() const;
};

// Karhunen-Loeve expansion of the diffusion field around sqrt(2).
struct KlField {
  Vector eigenvalues;   // n_theta, nonincreasing
  Matrix eigenvectors;  // d x n_theta, unit 2-norm columns
  double base_value = 1.4142135623730951;
  double hypercube_bound = 0.0;  // max |theta_i| keeping nu >= 0
};

// Dominant eigenpairs of C_ij = a exp(-|x_i - x_j| / (2 b^2)) + c delta_ij on
// the grid nodes. Eigenvector sign: first entry above 1e-8 in magnitude is
// positive.
KlField build_kl_field(const PolarGrid& grid, double a = 1.0, double b = 1.0,
                       double c = 0.1, int n_theta = 6);

// nu(x, theta) = sqrt(2) + sum_i theta_i sqrt(lambda_i) xi_i(x)
Vector nu(const KlField& field, const Vector& theta);

// u(0, x) = exp(-(x1 - 1.5)^2 - 50 x2^2)
Vector initial_condition(const PolarGrid& grid);

// 8 Gaussian-weighted integral functionals, centers (rho cos a, rho sin a)
// for rho in {1, 1.5} ascending and a in {pi/2, pi/3, pi/4, pi/6}.
Matrix partial_observation_matrix(const PolarGrid& grid);

// Reaction-diffusion drift du/dt = div(nu grad u) + reaction u (1 - u) with
// homogeneous Neumann walls; the conservative flux form kills constants
// exactly.
class FisherKpp : public ForwardModel {
 public:
  FisherKpp(PolarGrid grid, int n_theta = 6, double a = 1.0, double b = 1.0,
            double c = 0.1, double reaction = 75.0);

  Eigen::Index state_dim() const override { return grid_.size(); }
  Eigen::Index param_dim() const override { return n_theta_; }

  void drift(double t, const Matrix& states, const Matrix& params,
             Matrix& out) const override;
  void drift_rows(double t, const std::vector<Eigen::Index>& rows,
                  const StateRowFn& state_row, const Matrix& params,
                  Matrix& out) const override;

  const PolarGrid& grid() const { return grid_; }
  const KlField& field() const { return field_; }
  double reaction() const { return reaction_; }

 private:
  // single-particle drift with a precomputed diffusion field
  void drift_single(const Eigen::Ref<const Vector>& u, const Vector& nu_vals,
                    Eigen::Ref<Vector> out) const;

  PolarGrid grid_;
  int n_theta_;
  double reaction_;
  KlField field_;
};

}  // namespace dlrenkf::models
