#pragma once

#include <string>
#include <vector>

#include "dlrenkf/forward_model.hpp"

namespace dlrenkf::models {

struct BloodConstants {
  double rho = 1050.0;       // kg / m^3
  double nu_visc = 9e-6;     // m^2 / s
  double p_ext = 11465.692;  // Pa
};

struct Vessel {
  int id = 0;  // 1-based, as in the dataset
  std::string name;
  double length = 0.0;  // m
  double area0 = 0.0;   // m^2 at rest
  double beta = 0.0;    // kg m^-2 s^-2
  int cells = 0;
  double dx = 0.0;               // length / cells
  Eigen::Index cell_offset = 0;  // into the per-variable cell numbering
};

struct Junction {
  int parent = -1, child1 = -1, child2 = -1;  // indices into vessels
};

// periodic inflow area at the ascending aorta
struct InflowSeries {
  double a0 = 7.441e-4;
  double a[4] = {-2.809e-5, -3.094e-5, -5.753e-6, 1.557e-6};
  double b[4] = {4.699e-5, 3.497e-6, -1.405e-5, -2.932e-6};
  double period = 0.8;

  double area(double t) const {
    const double w = 2.0 * M_PI / period;
    double v = a0;
    for (int k = 0; k < 4; ++k)
      v += a[k] * std::cos((k + 1) * w * t) + b[k] * std::sin((k + 1) * w * t);
    return v;
  }

  static InflowSeries constant(double area) {
    InflowSeries s;
    s.a0 = area;
    for (int k = 0; k < 4; ++k) s.a[k] = s.b[k] = 0.0;
    return s;
  }
};

struct Network {
  std::vector<Vessel> vessels;
  std::vector<Junction> junctions;
  int inlet = 0;
  std::vector<int> outlets;
  BloodConstants constants;
  InflowSeries inflow;
  Eigen::Index total_cells = 0;

  Eigen::Index state_dim() const { return 2 * total_cells; }
  // state layout: [all A cells; all u cells]
  Eigen::Index a_index(int vessel, int cell) const {
    return vessels[vessel].cell_offset + cell;
  }
  Eigen::Index u_index(int vessel, int cell) const {
    return total_cells + vessels[vessel].cell_offset + cell;
  }
};

// Parse and validate a network description (JSON text). The junction graph
// must be a tree rooted at the inlet whose leaves are exactly the outlets.
Network load_network(const std::string& json_text);
Network load_network_file(const std::string& path);

struct CellState {
  double a = 0.0;
  double u = 0.0;
};

struct FluxPair {
  double f1 = 0.0;
  double f2 = 0.0;
};

double pressure(double a, double beta, double area0, const BloodConstants& k);
double wave_speed(double a, double beta, const BloodConstants& k);

FluxPair physical_flux(double a, double u, double beta, double area0,
                       const BloodConstants& k);

struct Characteristics {
  double c, lambda1, lambda2, w1, w2;
};
Characteristics characteristics(double a, double u, double beta,
                                const BloodConstants& k);
// inverse map (W1, W2) -> (A, u)
CellState from_characteristics(double w1, double w2, double beta,
                               const BloodConstants& k);

// Minmod-limited MUSCL reconstruction with a local Lax-Friedrichs flux and
// the viscous source (0, -nu u / A). Ghost cells carry zero slope. Returns
// the largest |u| + c seen (CFL monitoring).
double muscl_llf_rhs(const Eigen::Ref<const Vector>& a,
                     const Eigen::Ref<const Vector>& u, CellState ghost_left,
                     CellState ghost_right, double beta, double area0,
                     double dx, const BloodConstants& k,
                     Eigen::Ref<Vector> da_dt, Eigen::Ref<Vector> du_dt);

// prescribed inflow area + outgoing characteristic from the interior
CellState inlet_bc(double t, CellState first_interior,
                   const InflowSeries& inflow, double beta,
                   const BloodConstants& k);

// non-reflecting outlet: d W2 / dt = -nu u / A on the incoming invariant,
// outgoing W1 extrapolated
CellState outlet_bc(CellState last_interior, double dt, double beta,
                    const BloodConstants& k);

struct JunctionGhosts {
  CellState parent, child1, child2;
  double residual = 0.0;
  int iterations = 0;
};

// mass flux conservation + total-pressure continuity + three characteristic
// compatibility relations, solved by Newton with an analytic Jacobian
JunctionGhosts bifurcation_solve(CellState parent_end, CellState child1_start,
                                 CellState child2_start, const Vessel& parent,
                                 const Vessel& child1, const Vessel& child2,
                                 const BloodConstants& k);

struct StepDiagnostics {
  double max_cfl = 0.0;
  double max_junction_residual = 0.0;
  double max_mach = 0.0;
};

// semi-discrete RHS of the whole network for one state vector; beta_override
// replaces the beta of selected vessels (parameter estimation hook)
void network_rhs(const Network& net, double t, double dt,
                 const Eigen::Ref<const Vector>& state,
                 const std::vector<std::pair<int, double>>& beta_override,
                 Eigen::Ref<Vector> out, StepDiagnostics* diag = nullptr);

// forward Euler step with freshly solved boundary and junction states
void step_network(const Network& net, double t, double dt, Vector& state,
                  const std::vector<std::pair<int, double>>& beta_override = {},
                  StepDiagnostics* diag = nullptr);

// Drift interface over the network; params hold the estimated betas for
// `estimated_vessels` (same order). Variable blocks: A then u.
class BloodFlowModel : public ForwardModel {
 public:
  BloodFlowModel(Network net, std::vector<int> estimated_vessels, double dt);

  Eigen::Index state_dim() const override { return net_.state_dim(); }
  Eigen::Index param_dim() const override {
    return static_cast<Eigen::Index>(estimated_.size());
  }
  std::vector<VariableBlock> blocks() const override {
    return {{"A", 0, net_.total_cells},
            {"u", net_.total_cells, net_.state_dim()}};
  }

  void drift(double t, const Matrix& states, const Matrix& params,
             Matrix& out) const override;
  void drift_rows(double t, const std::vector<Eigen::Index>& rows,
                  const StateRowFn& state_row, const Matrix& params,
                  Matrix& out) const override;

  const Network& network() const { return net_; }
  const std::vector<int>& estimated_vessels() const { return estimated_; }
  const StepDiagnostics& diagnostics() const { return diag_; }

  // rest state (A = A0, u = 0)
  Vector rest_state() const;

 private:
  Network net_;
  std::vector<int> estimated_;
  double dt_;
  mutable StepDiagnostics diag_;
};

}  // namespace dlrenkf::models
