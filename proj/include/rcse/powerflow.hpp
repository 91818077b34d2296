#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "rcse/admittance.hpp"
#include "rcse/network.hpp"
#include "rcse/state.hpp"

namespace rcse {

inline Eigen::VectorXcd complex_voltage(const StateVector& s) {
  const int n = s.bus_count();
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v[i] = std::polar(s.v_mag[i], s.v_ang[i]);
  return v;
}

// Polar-form bus injections:
//   P_i = V_i sum_j V_j (G_ij cos th_ij + B_ij sin th_ij)
//   Q_i = V_i sum_j V_j (G_ij sin th_ij - B_ij cos th_ij)
inline void eval_injections(const StateVector& s, const AdmittanceMatrix& ybus,
                            Eigen::VectorXd& p, Eigen::VectorXd& q) {
  const int n = ybus.n;
  p.setZero(n);
  q.setZero(n);
  for (int col = 0; col < ybus.y.outerSize(); ++col) {
    for (Eigen::SparseMatrix<Complex>::InnerIterator it(ybus.y, col); it; ++it) {
      const int i = static_cast<int>(it.row());
      const int j = col;
      const double g = it.value().real();
      const double b = it.value().imag();
      const double th = s.v_ang[i] - s.v_ang[j];
      const double vv = s.v_mag[i] * s.v_mag[j];
      p[i] += vv * (g * std::cos(th) + b * std::sin(th));
      q[i] += vv * (g * std::sin(th) - b * std::cos(th));
    }
  }
}

// Dense injection partials w.r.t. all angles and magnitudes. Row i of each
// block is d{P,Q}_i / d{theta,V}_j; the slack column is dropped later when
// rows are packed against the free-variable ordering.
struct InjectionPartials {
  Eigen::MatrixXd dp_dth, dp_dv, dq_dth, dq_dv;
  Eigen::VectorXd p, q;
};

inline InjectionPartials injection_partials(const StateVector& s, const AdmittanceMatrix& ybus) {
  const int n = ybus.n;
  InjectionPartials out;
  out.dp_dth.setZero(n, n);
  out.dp_dv.setZero(n, n);
  out.dq_dth.setZero(n, n);
  out.dq_dv.setZero(n, n);
  eval_injections(s, ybus, out.p, out.q);

  for (int col = 0; col < ybus.y.outerSize(); ++col) {
    for (Eigen::SparseMatrix<Complex>::InnerIterator it(ybus.y, col); it; ++it) {
      const int i = static_cast<int>(it.row());
      const int j = col;
      const double g = it.value().real();
      const double b = it.value().imag();
      if (i == j) continue;  // diagonal handled below
      const double th = s.v_ang[i] - s.v_ang[j];
      const double c = std::cos(th), sn = std::sin(th);
      const double vv = s.v_mag[i] * s.v_mag[j];
      out.dp_dth(i, j) = vv * (g * sn - b * c);
      out.dp_dv(i, j) = s.v_mag[i] * (g * c + b * sn);
      out.dq_dth(i, j) = -vv * (g * c + b * sn);
      out.dq_dv(i, j) = s.v_mag[i] * (g * sn - b * c);
    }
  }
  for (int i = 0; i < n; ++i) {
    const Complex yii = ybus.y.coeff(i, i);
    const double gii = yii.real(), bii = yii.imag();
    const double vi = s.v_mag[i];
    out.dp_dth(i, i) = -out.q[i] - bii * vi * vi;
    out.dp_dv(i, i) = out.p[i] / vi + gii * vi;
    out.dq_dth(i, i) = out.p[i] - gii * vi * vi;
    out.dq_dv(i, i) = out.q[i] / vi - bii * vi;
  }
  return out;
}

struct BranchFlows {
  Eigen::VectorXd p_from, q_from, p_to, q_to;  // per branch; zero when out of service
};

inline BranchFlows eval_flows(const StateVector& s, const NetworkCase& net,
                              const AdmittanceMatrix& ybus) {
  const int nb = net.branch_count();
  BranchFlows f;
  f.p_from.setZero(nb);
  f.q_from.setZero(nb);
  f.p_to.setZero(nb);
  f.q_to.setZero(nb);
  const Eigen::VectorXcd v = complex_voltage(s);
  for (int k = 0; k < nb; ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service) continue;
    const Complex vf = v[br.from_bus], vt = v[br.to_bus];
    const Complex sf = vf * std::conj(ybus.y_ff[k] * vf + ybus.y_ft[k] * vt);
    const Complex st = vt * std::conj(ybus.y_tf[k] * vf + ybus.y_tt[k] * vt);
    f.p_from[k] = sf.real();
    f.q_from[k] = sf.imag();
    f.p_to[k] = st.real();
    f.q_to[k] = st.imag();
  }
  return f;
}

// Partials of one branch-end complex flow w.r.t. (th_f, th_t, V_f, V_t).
// With S_e = V_e conj(y_e1 V_f + y_e2 V_t), differentiation of the polar
// voltages gives closed forms in the complex plane; callers take Re/Im.
struct FlowPartials {
  Complex d_th_f, d_th_t, d_v_f, d_v_t;
  Complex value;
};

inline FlowPartials branch_flow_partials(const StateVector& s, const AdmittanceMatrix& ybus,
                                         const BranchRecord& br, int branch_idx, BranchEnd end) {
  const Complex vf = std::polar(s.v_mag[br.from_bus], s.v_ang[br.from_bus]);
  const Complex vt = std::polar(s.v_mag[br.to_bus], s.v_ang[br.to_bus]);
  const Complex i1(0.0, 1.0);
  FlowPartials out{};
  if (!br.in_service) return out;
  if (end == BranchEnd::From) {
    const Complex yff = ybus.y_ff[branch_idx], yft = ybus.y_ft[branch_idx];
    const Complex own = vf * std::conj(yff * vf);
    const Complex cross = vf * std::conj(yft * vt);
    out.value = own + cross;
    out.d_th_f = i1 * cross;        // own term's phase cancels
    out.d_th_t = -i1 * cross;
    out.d_v_f = (out.value + own) / s.v_mag[br.from_bus];
    out.d_v_t = cross / s.v_mag[br.to_bus];
  } else {
    const Complex ytf = ybus.y_tf[branch_idx], ytt = ybus.y_tt[branch_idx];
    const Complex own = vt * std::conj(ytt * vt);
    const Complex cross = vt * std::conj(ytf * vf);
    out.value = own + cross;
    out.d_th_t = i1 * cross;
    out.d_th_f = -i1 * cross;
    out.d_v_t = (out.value + own) / s.v_mag[br.to_bus];
    out.d_v_f = cross / s.v_mag[br.from_bus];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Newton-Raphson power flow
// ---------------------------------------------------------------------------

struct PowerFlowOptions {
  double tolerance = 1e-8;  // p.u. mismatch, infinity norm
  int max_iterations = 30;
};

struct PowerFlowSolution {
  StateVector state;
  int iterations = 0;
  double max_mismatch = 0.0;
  bool converged = false;
  std::string message;
};

// Specified net injections: p at every non-slack bus, q at pq buses only
// (pv-bus voltage magnitude is held at the start value).
struct InjectionSpec {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

inline PowerFlowSolution solve_powerflow(const NetworkCase& net, const AdmittanceMatrix& ybus,
                                         const InjectionSpec& spec, const StateVector& start,
                                         const PowerFlowOptions& opts = {}) {
  const int n = net.bus_count();
  const int slack = net.slack_index();

  std::vector<int> ang_vars;  // non-slack buses
  std::vector<int> mag_vars;  // pq buses
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    ang_vars.push_back(i);
    if (net.buses[i].kind == BusKind::Pq) mag_vars.push_back(i);
  }
  const int n_ang = static_cast<int>(ang_vars.size());
  const int n_mag = static_cast<int>(mag_vars.size());
  const int dim = n_ang + n_mag;

  PowerFlowSolution sol;
  sol.state = start;
  sol.state.v_ang[slack] = 0.0;

  Eigen::VectorXd p, q, f(dim);
  Eigen::MatrixXd jac(dim, dim);

  for (int it = 0; it <= opts.max_iterations; ++it) {
    eval_injections(sol.state, ybus, p, q);
    for (int a = 0; a < n_ang; ++a) f[a] = spec.p[ang_vars[a]] - p[ang_vars[a]];
    for (int m = 0; m < n_mag; ++m) f[n_ang + m] = spec.q[mag_vars[m]] - q[mag_vars[m]];
    sol.max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    sol.iterations = it;
    if (sol.max_mismatch < opts.tolerance) {
      sol.converged = true;
      return sol;
    }
    if (it == opts.max_iterations) break;

    const InjectionPartials d = injection_partials(sol.state, ybus);
    for (int a = 0; a < n_ang; ++a) {
      const int i = ang_vars[a];
      for (int b = 0; b < n_ang; ++b) jac(a, b) = d.dp_dth(i, ang_vars[b]);
      for (int m = 0; m < n_mag; ++m) jac(a, n_ang + m) = d.dp_dv(i, mag_vars[m]);
    }
    for (int mq = 0; mq < n_mag; ++mq) {
      const int i = mag_vars[mq];
      for (int b = 0; b < n_ang; ++b) jac(n_ang + mq, b) = d.dq_dth(i, ang_vars[b]);
      for (int m = 0; m < n_mag; ++m) jac(n_ang + mq, n_ang + m) = d.dq_dv(i, mag_vars[m]);
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const Eigen::VectorXd dx = lu.solve(f);
    if (!dx.allFinite() || (jac * dx - f).norm() > 1e-6 * (1.0 + f.norm())) {
      sol.message = "singular Jacobian at iteration " + std::to_string(it);
      return sol;
    }
    for (int a = 0; a < n_ang; ++a) sol.state.v_ang[ang_vars[a]] += dx[a];
    for (int m = 0; m < n_mag; ++m) sol.state.v_mag[mag_vars[m]] += dx[n_ang + m];
  }
  sol.message = "no convergence: max mismatch " + std::to_string(sol.max_mismatch);
  return sol;
}

}  // namespace rcse
