#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "rcse/admittance.hpp"
#include "rcse/measurement.hpp"
#include "rcse/network.hpp"
#include "rcse/powerflow.hpp"
#include "rcse/state.hpp"

namespace rcse {

// Immutable bundle the estimation layer passes around.
struct SystemModel {
  const NetworkCase& net;
  const AdmittanceMatrix& ybus;
  const MeasurementPlan& plan;
};

namespace detail {

inline std::vector<int> channel_list(const MeasurementPlan& plan, Subset subset) {
  std::vector<int> idx;
  if (subset == Subset::All) {
    idx.resize(plan.channel_count());
    for (int i = 0; i < plan.channel_count(); ++i) idx[i] = i;
  } else {
    idx = plan.subset_indices(subset);
  }
  return idx;
}

}  // namespace detail

// Evaluates the requested channel subset in plan order. Subset::ZeroInjection
// returns the exact-balance residual targets (P then Q per zero-injection
// bus, ascending); those are constraints, not channels, and are all zero for
// a physically consistent state.
inline MeasurementVector eval_measurement_fn(const StateVector& s, const SystemModel& model,
                                             Subset subset) {
  MeasurementVector out;
  out.plan_id = model.plan.id;

  Eigen::VectorXd p, q;
  bool have_inj = false;
  BranchFlows flows;
  bool have_flows = false;

  if (subset == Subset::ZeroInjection) {
    eval_injections(s, model.ybus, p, q);
    const auto& zi = model.plan.zero_injection_buses;
    out.values.resize(2 * zi.size());
    for (std::size_t i = 0; i < zi.size(); ++i) {
      out.values[2 * i] = p[zi[i]];
      out.values[2 * i + 1] = q[zi[i]];
    }
    return out;
  }

  const auto idx = detail::channel_list(model.plan, subset);
  out.values.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& ch = model.plan.channels[idx[r]];
    switch (ch.kind) {
      case ChannelKind::VMag:
        out.values[r] = s.v_mag[ch.bus];
        break;
      case ChannelKind::VAngle:
        out.values[r] = s.v_ang[ch.bus];
        break;
      case ChannelKind::PInjection:
      case ChannelKind::QInjection:
        if (!have_inj) {
          eval_injections(s, model.ybus, p, q);
          have_inj = true;
        }
        out.values[r] = ch.kind == ChannelKind::PInjection ? p[ch.bus] : q[ch.bus];
        break;
      case ChannelKind::PFlow:
      case ChannelKind::QFlow: {
        if (!have_flows) {
          flows = eval_flows(s, model.net, model.ybus);
          have_flows = true;
        }
        const bool from = ch.end == BranchEnd::From;
        if (ch.kind == ChannelKind::PFlow)
          out.values[r] = from ? flows.p_from[ch.branch] : flows.p_to[ch.branch];
        else
          out.values[r] = from ? flows.q_from[ch.branch] : flows.q_to[ch.branch];
        break;
      }
    }
  }
  return out;
}

// Analytic partials of each channel w.r.t. the free state variables
// (angles at non-slack buses ascending, then all magnitudes). Row order
// matches eval_measurement_fn for the same subset.
inline Eigen::MatrixXd measurement_jacobian(const StateVector& s, const SystemModel& model,
                                            Subset subset) {
  const int n = model.net.bus_count();
  const int slack = s.slack_bus;
  const int n_free = 2 * n - 1;

  std::vector<int> ang_col(n, -1);
  {
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (i != slack) ang_col[i] = k++;
  }
  auto mag_col = [n](int bus) { return (n - 1) + bus; };

  InjectionPartials inj;
  bool have_inj = false;
  auto ensure_inj = [&]() {
    if (!have_inj) {
      inj = injection_partials(s, model.ybus);
      have_inj = true;
    }
  };

  auto injection_row = [&](Eigen::MatrixXd& h, int row, int bus, bool active) {
    ensure_inj();
    const auto& dth = active ? inj.dp_dth : inj.dq_dth;
    const auto& dv = active ? inj.dp_dv : inj.dq_dv;
    for (int j = 0; j < n; ++j) {
      if (j != slack) h(row, ang_col[j]) = dth(bus, j);
      h(row, mag_col(j)) = dv(bus, j);
    }
  };

  if (subset == Subset::ZeroInjection) {
    const auto& zi = model.plan.zero_injection_buses;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * zi.size(), n_free);
    for (std::size_t i = 0; i < zi.size(); ++i) {
      injection_row(h, static_cast<int>(2 * i), zi[i], true);
      injection_row(h, static_cast<int>(2 * i + 1), zi[i], false);
    }
    return h;
  }

  const auto idx = detail::channel_list(model.plan, subset);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(idx.size(), n_free);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& ch = model.plan.channels[idx[r]];
    const int row = static_cast<int>(r);
    switch (ch.kind) {
      case ChannelKind::VMag:
        h(row, mag_col(ch.bus)) = 1.0;
        break;
      case ChannelKind::VAngle:
        if (ch.bus != slack) h(row, ang_col[ch.bus]) = 1.0;  // reference row stays zero
        break;
      case ChannelKind::PInjection:
        injection_row(h, row, ch.bus, true);
        break;
      case ChannelKind::QInjection:
        injection_row(h, row, ch.bus, false);
        break;
      case ChannelKind::PFlow:
      case ChannelKind::QFlow: {
        const auto& br = model.net.branches[ch.branch];
        const FlowPartials fp = branch_flow_partials(s, model.ybus, br, ch.branch, ch.end);
        const bool active = ch.kind == ChannelKind::PFlow;
        auto part = [active](Complex z) { return active ? z.real() : z.imag(); };
        if (br.from_bus != slack) h(row, ang_col[br.from_bus]) = part(fp.d_th_f);
        if (br.to_bus != slack) h(row, ang_col[br.to_bus]) = part(fp.d_th_t);
        h(row, mag_col(br.from_bus)) = part(fp.d_v_f);
        h(row, mag_col(br.to_bus)) = part(fp.d_v_t);
        break;
      }
    }
  }
  return h;
}

struct ObservabilityReport {
  bool observable = false;
  double condition = std::numeric_limits<double>::infinity();
  int rank = 0;
  int columns = 0;
};

// Numerical observability of the real-time (available) channel set: the
// available rows plus the zero-injection constraint rows must have full
// column rank with a condition number below the cap.
inline ObservabilityReport observability_check(const StateVector& s, const SystemModel& model,
                                               double condition_cap = 1e8) {
  const Eigen::MatrixXd h_avail = measurement_jacobian(s, model, Subset::Available);
  const Eigen::MatrixXd h_zero = measurement_jacobian(s, model, Subset::ZeroInjection);
  Eigen::MatrixXd h(h_avail.rows() + h_zero.rows(), h_avail.cols());
  h << h_avail, h_zero;

  ObservabilityReport rep;
  rep.columns = static_cast<int>(h.cols());
  if (h.rows() == 0) return rep;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  const double tol = std::max(h.rows(), h.cols()) *
                     std::numeric_limits<double>::epsilon() * smax;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > tol) ++rank;
  rep.rank = rank;
  if (rank == rep.columns && sv[sv.size() - 1] > 0.0)
    rep.condition = smax / sv[sv.size() - 1];
  rep.observable = rank == rep.columns && rep.condition < condition_cap;
  return rep;
}

}  // namespace rcse
