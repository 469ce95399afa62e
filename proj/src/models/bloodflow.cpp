#include "dlrenkf/models/bloodflow.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "dlrenkf/errors.hpp"

namespace dlrenkf::models {

double pressure(double a, double beta, double area0, const BloodConstants& k) {
  return k.p_ext + beta * (std::sqrt(a) - std::sqrt(area0));
}

double wave_speed(double a, double beta, const BloodConstants& k) {
  return std::sqrt(beta / (2.0 * k.rho)) * std::pow(a, 0.25);
}

FluxPair physical_flux(double a, double u, double beta, double area0,
                       const BloodConstants& k) {
  if (a <= 0.0) throw NonPhysical("physical_flux: nonpositive area");
  return {a * u, 0.5 * u * u + pressure(a, beta, area0, k) / k.rho};
}

Characteristics characteristics(double a, double u, double beta,
                                const BloodConstants& k) {
  const double c = wave_speed(a, beta, k);
  return {c, u + c, u - c, u + 4.0 * c, u - 4.0 * c};
}

CellState from_characteristics(double w1, double w2, double beta,
                               const BloodConstants& k) {
  const double c = (w1 - w2) / 8.0;
  if (c <= 0.0) throw NonPhysical("from_characteristics: collapsed state");
  const double root = c * c * 2.0 * k.rho / beta;  // = sqrt(A)
  return {root * root, 0.5 * (w1 + w2)};
}

namespace {

inline double minmod(double a, double b) {
  if (a > 0.0 && b > 0.0) return std::min(a, b);
  if (a < 0.0 && b < 0.0) return std::max(a, b);
  return 0.0;
}

inline FluxPair llf_flux(const CellState& left, const CellState& right,
                         double beta, double area0, const BloodConstants& k,
                         double* max_speed) {
  const double cl = wave_speed(left.a, beta, k);
  const double cr = wave_speed(right.a, beta, k);
  const double speed =
      std::max(std::abs(left.u) + cl, std::abs(right.u) + cr);
  if (max_speed) *max_speed = std::max(*max_speed, speed);
  const FluxPair fl = physical_flux(left.a, left.u, beta, area0, k);
  const FluxPair fr = physical_flux(right.a, right.u, beta, area0, k);
  return {0.5 * (fl.f1 + fr.f1) - 0.5 * speed * (right.a - left.a),
          0.5 * (fl.f2 + fr.f2) - 0.5 * speed * (right.u - left.u)};
}

struct VesselParams {
  double beta;
  double area0;
};

// RHS of a single cell from its 5-point neighbourhood; fetch(j) must return
// the cell state for -1 <= j <= n (ghosts at -1 and n, zero slope there).
template <typename Fetch>
void cell_rhs(int i, int n, double beta, double area0, double dx,
              const BloodConstants& k, const Fetch& fetch, double& da_dt,
              double& du_dt) {
  auto slope = [&](int j) -> CellState {
    if (j < 0 || j >= n) return {0.0, 0.0};
    const CellState m = fetch(j - 1), c = fetch(j), p = fetch(j + 1);
    return {minmod(c.a - m.a, p.a - c.a), minmod(c.u - m.u, p.u - c.u)};
  };
  auto face = [&](int j) {  // interface between cells j and j+1
    const CellState cl = fetch(j), sl = slope(j);
    const CellState cr = fetch(j + 1), sr = slope(j + 1);
    const CellState left{cl.a + 0.5 * sl.a, cl.u + 0.5 * sl.u};
    const CellState right{cr.a - 0.5 * sr.a, cr.u - 0.5 * sr.u};
    if (left.a <= 0.0 || right.a <= 0.0)
      throw NonPhysical("muscl: reconstructed area nonpositive");
    return llf_flux(left, right, beta, area0, k, nullptr);
  };
  const FluxPair fp = face(i);
  const FluxPair fm = face(i - 1);
  const CellState c = fetch(i);
  da_dt = -(fp.f1 - fm.f1) / dx;
  du_dt = -(fp.f2 - fm.f2) / dx - k.nu_visc * c.u / c.a;
}

}  // namespace

double muscl_llf_rhs(const Eigen::Ref<const Vector>& a,
                     const Eigen::Ref<const Vector>& u, CellState ghost_left,
                     CellState ghost_right, double beta, double area0,
                     double dx, const BloodConstants& k,
                     Eigen::Ref<Vector> da_dt, Eigen::Ref<Vector> du_dt) {
  const int n = static_cast<int>(a.size());
  double max_speed = 0.0;

  auto state = [&](int j) -> CellState {
    if (j < 0) return ghost_left;
    if (j >= n) return ghost_right;
    return {a[j], u[j]};
  };
  auto slope = [&](int j) -> CellState {
    if (j < 0 || j >= n) return {0.0, 0.0};
    const CellState m = state(j - 1), c = state(j), p = state(j + 1);
    return {minmod(c.a - m.a, p.a - c.a), minmod(c.u - m.u, p.u - c.u)};
  };

  // sweep the n+1 interfaces once
  FluxPair prev;
  CellState sl = slope(-1);
  for (int j = -1; j < n; ++j) {
    const CellState cl = state(j);
    const CellState cr = state(j + 1);
    const CellState sr = slope(j + 1);
    const CellState left{cl.a + 0.5 * sl.a, cl.u + 0.5 * sl.u};
    const CellState right{cr.a - 0.5 * sr.a, cr.u - 0.5 * sr.u};
    if (left.a <= 0.0 || right.a <= 0.0)
      throw NonPhysical("muscl: reconstructed area nonpositive");
    const FluxPair f = llf_flux(left, right, beta, area0, k, &max_speed);
    if (j >= 0) {
      da_dt[j] = -(f.f1 - prev.f1) / dx;
      du_dt[j] = -(f.f2 - prev.f2) / dx - k.nu_visc * u[j] / a[j];
    }
    prev = f;
    sl = sr;
  }
  return max_speed;
}

CellState inlet_bc(double t, CellState first_interior,
                   const InflowSeries& inflow, double beta,
                   const BloodConstants& k) {
  const double a_in = inflow.area(t);
  if (a_in <= 0.0) throw NonPhysical("inlet_bc: prescribed area nonpositive");
  const double w2 =
      characteristics(first_interior.a, first_interior.u, beta, k).w2;
  return {a_in, w2 + 4.0 * wave_speed(a_in, beta, k)};
}

CellState outlet_bc(CellState last_interior, double dt, double beta,
                    const BloodConstants& k) {
  const auto ch = characteristics(last_interior.a, last_interior.u, beta, k);
  const double w2_new =
      ch.w2 - dt * k.nu_visc * last_interior.u / last_interior.a;
  return from_characteristics(ch.w1, w2_new, beta, k);
}

namespace {

JunctionGhosts bifurcation_solve_impl(CellState pe, CellState c1s,
                                      CellState c2s, VesselParams pp,
                                      VesselParams p1, VesselParams p2,
                                      const BloodConstants& k) {
  const double w1_target = characteristics(pe.a, pe.u, pp.beta, k).w1;
  const double w2_target1 = characteristics(c1s.a, c1s.u, p1.beta, k).w2;
  const double w2_target2 = characteristics(c2s.a, c2s.u, p2.beta, k).w2;

  // residual scales built from the parent rest state
  const double c0 = wave_speed(pp.area0, pp.beta, k);
  const double q_scale = pp.area0 * c0;
  const double p_scale = k.rho * c0 * c0;

  Eigen::Matrix<double, 6, 1> x;
  x << pe.a, pe.u, c1s.a, c1s.u, c2s.a, c2s.u;

  auto residual = [&](const Eigen::Matrix<double, 6, 1>& v) {
    Eigen::Matrix<double, 6, 1> r;
    const double ap = v[0], up = v[1], a1 = v[2], u1 = v[3], a2 = v[4],
                 u2 = v[5];
    const double ppres = pressure(ap, pp.beta, pp.area0, k);
    const double p1res = pressure(a1, p1.beta, p1.area0, k);
    const double p2res = pressure(a2, p2.beta, p2.area0, k);
    r[0] = (ap * up - a1 * u1 - a2 * u2) / q_scale;
    r[1] = (0.5 * k.rho * (up * up - u1 * u1) + ppres - p1res) / p_scale;
    r[2] = (0.5 * k.rho * (up * up - u2 * u2) + ppres - p2res) / p_scale;
    r[3] = (up + 4.0 * wave_speed(ap, pp.beta, k) - w1_target) / c0;
    r[4] = (u1 - 4.0 * wave_speed(a1, p1.beta, k) - w2_target1) / c0;
    r[5] = (u2 - 4.0 * wave_speed(a2, p2.beta, k) - w2_target2) / c0;
    return r;
  };

  JunctionGhosts out;
  Eigen::Matrix<double, 6, 1> r = residual(x);
  for (int it = 0; it < 50; ++it) {
    if (r.cwiseAbs().maxCoeff() < 1e-12) {
      out.parent = {x[0], x[1]};
      out.child1 = {x[2], x[3]};
      out.child2 = {x[4], x[5]};
      out.residual = r.cwiseAbs().maxCoeff();
      out.iterations = it;
      return out;
    }
    Eigen::Matrix<double, 6, 6> jac = Eigen::Matrix<double, 6, 6>::Zero();
    const double ap = x[0], up = x[1], a1 = x[2], u1 = x[3], a2 = x[4],
                 u2 = x[5];
    jac(0, 0) = up / q_scale;
    jac(0, 1) = ap / q_scale;
    jac(0, 2) = -u1 / q_scale;
    jac(0, 3) = -a1 / q_scale;
    jac(0, 4) = -u2 / q_scale;
    jac(0, 5) = -a2 / q_scale;
    jac(1, 0) = pp.beta / (2.0 * std::sqrt(ap)) / p_scale;
    jac(1, 1) = k.rho * up / p_scale;
    jac(1, 2) = -p1.beta / (2.0 * std::sqrt(a1)) / p_scale;
    jac(1, 3) = -k.rho * u1 / p_scale;
    jac(2, 0) = pp.beta / (2.0 * std::sqrt(ap)) / p_scale;
    jac(2, 1) = k.rho * up / p_scale;
    jac(2, 4) = -p2.beta / (2.0 * std::sqrt(a2)) / p_scale;
    jac(2, 5) = -k.rho * u2 / p_scale;
    jac(3, 0) = wave_speed(ap, pp.beta, k) / ap / c0;
    jac(3, 1) = 1.0 / c0;
    jac(4, 2) = -wave_speed(a1, p1.beta, k) / a1 / c0;
    jac(4, 3) = 1.0 / c0;
    jac(5, 4) = -wave_speed(a2, p2.beta, k) / a2 / c0;
    jac(5, 5) = 1.0 / c0;

    Eigen::Matrix<double, 6, 1> dx = jac.partialPivLu().solve(r);
    double damping = 1.0;
    for (int cut = 0; cut < 40; ++cut) {
      Eigen::Matrix<double, 6, 1> trial = x - damping * dx;
      if (trial[0] > 0.0 && trial[2] > 0.0 && trial[4] > 0.0) {
        x = trial;
        break;
      }
      damping *= 0.5;
    }
    r = residual(x);
  }
  throw NewtonDivergence("bifurcation_solve: no convergence in 50 iterations");
}

}  // namespace

JunctionGhosts bifurcation_solve(CellState parent_end, CellState child1_start,
                                 CellState child2_start, const Vessel& parent,
                                 const Vessel& child1, const Vessel& child2,
                                 const BloodConstants& k) {
  return bifurcation_solve_impl(parent_end, child1_start, child2_start,
                                {parent.beta, parent.area0},
                                {child1.beta, child1.area0},
                                {child2.beta, child2.area0}, k);
}

Network load_network(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("network config: invalid JSON: ") + e.what());
  }

  Network net;
  const double dx = j.value("dx", 2e-3);
  if (!(dx > 0.0)) throw ConfigError("network config: dx must be positive");
  net.constants.rho = j.value("rho", 1050.0);
  net.constants.nu_visc = j.value("nu_visc", 9e-6);
  net.constants.p_ext = j.value("p_ext", 11465.692);
  if (j.contains("inflow")) {
    const auto& in = j.at("inflow");
    net.inflow.a0 = in.value("a0", net.inflow.a0);
    net.inflow.period = in.value("period", 0.8);
    if (in.contains("a"))
      for (int k2 = 0; k2 < 4; ++k2) net.inflow.a[k2] = in.at("a").at(k2);
    if (in.contains("b"))
      for (int k2 = 0; k2 < 4; ++k2) net.inflow.b[k2] = in.at("b").at(k2);
  }
  // the prescribed inlet area must stay positive over one period
  for (int s = 0; s <= 1000; ++s) {
    if (net.inflow.area(net.inflow.period * s / 1000.0) <= 0.0)
      throw ConfigError("network config: inflow area nonpositive within a period");
  }

  if (!j.contains("vessels") || j.at("vessels").empty())
    throw ConfigError("network config: no vessels");
  std::map<int, int> id_to_index;
  for (const auto& jv : j.at("vessels")) {
    Vessel v;
    v.id = jv.at("id").get<int>();
    v.name = jv.value("name", "vessel-" + std::to_string(v.id));
    v.length = jv.at("length").get<double>();
    v.area0 = jv.at("area0").get<double>();
    v.beta = jv.at("beta").get<double>();
    if (!(v.length > 0.0 && v.area0 > 0.0 && v.beta > 0.0))
      throw ConfigError("vessel " + std::to_string(v.id) +
                        ": length, area0 and beta must be positive");
    v.cells = static_cast<int>(std::llround(v.length / dx));
    if (v.cells < 3)
      throw ConfigError("vessel " + std::to_string(v.id) +
                        ": too short for dx (needs >= 3 cells)");
    v.dx = v.length / v.cells;
    v.cell_offset = net.total_cells;
    if (id_to_index.count(v.id))
      throw ConfigError("vessel id " + std::to_string(v.id) + " duplicated");
    id_to_index[v.id] = static_cast<int>(net.vessels.size());
    net.total_cells += v.cells;
    net.vessels.push_back(std::move(v));
  }

  auto index_of = [&](int id, const char* what) {
    auto it = id_to_index.find(id);
    if (it == id_to_index.end())
      throw ConfigError(std::string(what) + ": unknown vessel id " +
                        std::to_string(id));
    return it->second;
  };

  if (!j.contains("inlet")) throw ConfigError("network config: inlet missing");
  net.inlet = index_of(j.at("inlet").get<int>(), "inlet");

  std::vector<int> parent_of(net.vessels.size(), -1);
  std::vector<std::vector<int>> children(net.vessels.size());
  for (const auto& jj : j.value("junctions", nlohmann::json::array())) {
    Junction jn;
    jn.parent = index_of(jj.at("parent").get<int>(), "junction parent");
    jn.child1 = index_of(jj.at("child1").get<int>(), "junction child1");
    jn.child2 = index_of(jj.at("child2").get<int>(), "junction child2");
    if (jn.child1 == jn.child2 || jn.parent == jn.child1 ||
        jn.parent == jn.child2)
      throw ConfigError("junction at vessel " +
                        std::to_string(net.vessels[jn.parent].id) +
                        ": vessels must be distinct");
    for (int c : {jn.child1, jn.child2}) {
      if (parent_of[c] != -1)
        throw ConfigError("vessel " + std::to_string(net.vessels[c].id) +
                          " has two parents (graph is not a tree)");
      parent_of[c] = jn.parent;
    }
    if (!children[jn.parent].empty())
      throw ConfigError("vessel " + std::to_string(net.vessels[jn.parent].id) +
                        " feeds two junctions");
    children[jn.parent] = {jn.child1, jn.child2};
    net.junctions.push_back(jn);
  }
  if (parent_of[net.inlet] != -1)
    throw ConfigError("inlet vessel cannot be a junction child");

  // reachability from the inlet (detects cycles and disconnected parts)
  std::vector<bool> seen(net.vessels.size(), false);
  std::vector<int> stack{net.inlet};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (seen[v]) throw ConfigError("junction graph contains a cycle");
    seen[v] = true;
    for (int c : children[v]) stack.push_back(c);
  }
  for (std::size_t v = 0; v < net.vessels.size(); ++v)
    if (!seen[v])
      throw ConfigError("vessel " + std::to_string(net.vessels[v].id) +
                        " unreachable from the inlet");

  std::set<int> leaves;
  for (std::size_t v = 0; v < net.vessels.size(); ++v)
    if (children[v].empty()) leaves.insert(static_cast<int>(v));
  if (j.contains("outlets")) {
    std::set<int> declared;
    for (const auto& o : j.at("outlets"))
      declared.insert(index_of(o.get<int>(), "outlet"));
    if (declared != leaves)
      throw ConfigError("declared outlets do not match the tree leaves");
  }
  net.outlets.assign(leaves.begin(), leaves.end());
  return net;
}

Network load_network_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw ConfigError("cannot open network config: " + path);
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return load_network(text);
}

void network_rhs(const Network& net, double t, double dt,
                 const Eigen::Ref<const Vector>& state,
                 const std::vector<std::pair<int, double>>& beta_override,
                 Eigen::Ref<Vector> out, StepDiagnostics* diag) {
  const Eigen::Index cells = net.total_cells;
  const int nv = static_cast<int>(net.vessels.size());
  std::vector<double> beta(nv);
  for (int v = 0; v < nv; ++v) beta[v] = net.vessels[v].beta;
  for (const auto& [v, b] : beta_override) beta[v] = b;

  auto cell_state = [&](int v, int cell) -> CellState {
    return {state[net.a_index(v, cell)], state[net.u_index(v, cell)]};
  };

  std::vector<CellState> ghost_l(nv), ghost_r(nv);
  std::vector<bool> is_terminal(nv, true);

  ghost_l[net.inlet] = inlet_bc(t, cell_state(net.inlet, 0), net.inflow,
                                beta[net.inlet], net.constants);
  for (const auto& jn : net.junctions) {
    is_terminal[jn.parent] = false;
    const auto& pv = net.vessels[jn.parent];
    const auto g = bifurcation_solve_impl(
        cell_state(jn.parent, pv.cells - 1), cell_state(jn.child1, 0),
        cell_state(jn.child2, 0), {beta[jn.parent], pv.area0},
        {beta[jn.child1], net.vessels[jn.child1].area0},
        {beta[jn.child2], net.vessels[jn.child2].area0}, net.constants);
    ghost_r[jn.parent] = g.parent;
    ghost_l[jn.child1] = g.child1;
    ghost_l[jn.child2] = g.child2;
    if (diag)
      diag->max_junction_residual =
          std::max(diag->max_junction_residual, g.residual);
  }
  for (int v = 0; v < nv; ++v) {
    if (is_terminal[v])
      ghost_r[v] = outlet_bc(cell_state(v, net.vessels[v].cells - 1), dt,
                             beta[v], net.constants);
  }

  for (int v = 0; v < nv; ++v) {
    const auto& vv = net.vessels[v];
    const auto a = state.segment(net.a_index(v, 0), vv.cells);
    const auto u = state.segment(net.u_index(v, 0), vv.cells);
    // subsonic monitoring
    for (int i = 0; i < vv.cells; ++i) {
      const double c = wave_speed(a[i], beta[v], net.constants);
      const double mach = std::abs(u[i]) / c;
      if (diag) diag->max_mach = std::max(diag->max_mach, mach);
      if (mach >= 1.0)
        throw NonPhysical("vessel " + std::to_string(vv.id) + " cell " +
                          std::to_string(i) + ": flow no longer subsonic");
    }
    const double speed = muscl_llf_rhs(
        a, u, ghost_l[v], ghost_r[v], beta[v], vv.area0, vv.dx, net.constants,
        out.segment(net.a_index(v, 0), vv.cells),
        out.segment(net.u_index(v, 0), vv.cells));
    if (diag)
      diag->max_cfl = std::max(diag->max_cfl, speed * dt / vv.dx);
  }
}

void step_network(const Network& net, double t, double dt, Vector& state,
                  const std::vector<std::pair<int, double>>& beta_override,
                  StepDiagnostics* diag) {
  Vector rhs(state.size());
  network_rhs(net, t, dt, state, beta_override, rhs, diag);
  state += dt * rhs;
  if (!state.allFinite())
    throw NonFinite("step_network: state no longer finite");
}

BloodFlowModel::BloodFlowModel(Network net, std::vector<int> estimated_vessels,
                               double dt)
    : net_(std::move(net)), estimated_(std::move(estimated_vessels)), dt_(dt) {
  for (int v : estimated_)
    if (v < 0 || v >= static_cast<int>(net_.vessels.size()))
      throw ConfigError("BloodFlowModel: estimated vessel index out of range");
}

Vector BloodFlowModel::rest_state() const {
  Vector x(net_.state_dim());
  for (std::size_t v = 0; v < net_.vessels.size(); ++v) {
    for (int i = 0; i < net_.vessels[v].cells; ++i) {
      x[net_.a_index(static_cast<int>(v), i)] = net_.vessels[v].area0;
      x[net_.u_index(static_cast<int>(v), i)] = 0.0;
    }
  }
  return x;
}

void BloodFlowModel::drift(double t, const Matrix& states, const Matrix& params,
                           Matrix& out) const {
  out.resize(states.rows(), states.cols());
  StepDiagnostics diag;
  std::vector<std::pair<int, double>> override(estimated_.size());
  for (Eigen::Index p = 0; p < states.cols(); ++p) {
    for (std::size_t k = 0; k < estimated_.size(); ++k)
      override[k] = {estimated_[k], params(static_cast<Eigen::Index>(k), p)};
    network_rhs(net_, t, dt_, states.col(p), override, out.col(p), &diag);
  }
  if (diag.max_cfl > diag_.max_cfl && diag.max_cfl >= 1.0 &&
      diag_.max_cfl < 1.0)
    std::cerr << "[bloodflow] CFL violation: " << diag.max_cfl << "\n";
  diag_.max_cfl = std::max(diag_.max_cfl, diag.max_cfl);
  diag_.max_junction_residual =
      std::max(diag_.max_junction_residual, diag.max_junction_residual);
  diag_.max_mach = std::max(diag_.max_mach, diag.max_mach);
}

void BloodFlowModel::drift_rows(double t, const std::vector<Eigen::Index>& rows,
                                const StateRowFn& state_row,
                                const Matrix& params, Matrix& out) const {
  const Eigen::Index particles = params.cols();
  const Eigen::Index cells = net_.total_cells;
  out.resize(static_cast<Eigen::Index>(rows.size()), particles);

  // state rows fetched lazily; ghosts solved lazily per (boundary, particle)
  std::map<Eigen::Index, Eigen::RowVectorXd> row_cache;
  auto fetch_row = [&](Eigen::Index idx) -> const Eigen::RowVectorXd& {
    auto it = row_cache.find(idx);
    if (it != row_cache.end()) return it->second;
    return row_cache.emplace(idx, state_row(idx)).first->second;
  };
  auto fetch_cell = [&](int v, int cell, Eigen::Index p) -> CellState {
    return {fetch_row(net_.a_index(v, cell))[p],
            fetch_row(net_.u_index(v, cell))[p]};
  };
  auto beta_of = [&](int v, Eigen::Index p) -> double {
    for (std::size_t k = 0; k < estimated_.size(); ++k)
      if (estimated_[k] == v) return params(static_cast<Eigen::Index>(k), p);
    return net_.vessels[v].beta;
  };

  std::vector<int> junction_of_parent(net_.vessels.size(), -1);
  std::vector<int> junction_of_child(net_.vessels.size(), -1);
  for (std::size_t ji = 0; ji < net_.junctions.size(); ++ji) {
    junction_of_parent[net_.junctions[ji].parent] = static_cast<int>(ji);
    junction_of_child[net_.junctions[ji].child1] = static_cast<int>(ji);
    junction_of_child[net_.junctions[ji].child2] = static_cast<int>(ji);
  }
  std::map<int, std::vector<JunctionGhosts>> junction_cache;
  auto junction_ghosts = [&](int ji) -> const std::vector<JunctionGhosts>& {
    auto it = junction_cache.find(ji);
    if (it != junction_cache.end()) return it->second;
    const auto& jn = net_.junctions[ji];
    const auto& pv = net_.vessels[jn.parent];
    std::vector<JunctionGhosts> all(particles);
    for (Eigen::Index p = 0; p < particles; ++p) {
      all[p] = bifurcation_solve_impl(
          fetch_cell(jn.parent, pv.cells - 1, p), fetch_cell(jn.child1, 0, p),
          fetch_cell(jn.child2, 0, p), {beta_of(jn.parent, p), pv.area0},
          {beta_of(jn.child1, p), net_.vessels[jn.child1].area0},
          {beta_of(jn.child2, p), net_.vessels[jn.child2].area0},
          net_.constants);
    }
    return junction_cache.emplace(ji, std::move(all)).first->second;
  };

  auto ghost_left = [&](int v, Eigen::Index p) -> CellState {
    if (v == net_.inlet)
      return inlet_bc(t, fetch_cell(v, 0, p), net_.inflow, beta_of(v, p),
                      net_.constants);
    const int ji = junction_of_child[v];
    const auto& g = junction_ghosts(ji)[p];
    return net_.junctions[ji].child1 == v ? g.child1 : g.child2;
  };
  auto ghost_right = [&](int v, Eigen::Index p) -> CellState {
    const int ji = junction_of_parent[v];
    if (ji < 0)
      return outlet_bc(fetch_cell(v, net_.vessels[v].cells - 1, p), dt_,
                       beta_of(v, p), net_.constants);
    return junction_ghosts(ji)[p].parent;
  };

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::Index idx = rows[r];
    const Eigen::Index cell_global = idx < cells ? idx : idx - cells;
    const bool is_area_row = idx < cells;
    // vessel of this cell
    int v = 0;
    while (v + 1 < static_cast<int>(net_.vessels.size()) &&
           net_.vessels[v + 1].cell_offset <= cell_global)
      ++v;
    const auto& vv = net_.vessels[v];
    const int i = static_cast<int>(cell_global - vv.cell_offset);

    for (Eigen::Index p = 0; p < particles; ++p) {
      auto fetch = [&](int jj) -> CellState {
        if (jj < 0) return ghost_left(v, p);
        if (jj >= vv.cells) return ghost_right(v, p);
        return fetch_cell(v, jj, p);
      };
      double da = 0.0, du = 0.0;
      cell_rhs(i, vv.cells, beta_of(v, p), vv.area0, vv.dx, net_.constants,
               fetch, da, du);
      out(r, p) = is_area_row ? da : du;
    }
  }
}

}  // namespace dlrenkf::models
