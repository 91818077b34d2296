#pragma once

// Independent reference implementations used only by tests. These stay on
// deliberately different evaluation paths from the library code they check.

#include <complex>

#include <Eigen/Dense>

#include "rcse/admittance.hpp"
#include "rcse/measurement_model.hpp"
#include "rcse/network.hpp"
#include "rcse/powerflow.hpp"
#include "rcse/state.hpp"

namespace oracles {

// brute-force dense bus admittance assembly, element by element
inline Eigen::MatrixXcd dense_admittance(const rcse::NetworkCase& net) {
  const int n = net.bus_count();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : net.branches) {
    if (!br.in_service) continue;
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> ysh(0.0, br.b_charging / 2.0);
    const std::complex<double> tap = std::polar(br.tap_ratio, br.phase_shift);
    y(br.from_bus, br.from_bus) += (ys + ysh) / std::norm(tap);
    y(br.from_bus, br.to_bus) += -ys / std::conj(tap);
    y(br.to_bus, br.from_bus) += -ys / tap;
    y(br.to_bus, br.to_bus) += ys + ysh;
  }
  for (int i = 0; i < n; ++i)
    y(i, i) += std::complex<double>(net.buses[i].shunt_g, net.buses[i].shunt_b);
  return y;
}

// complex-form injections S = diag(V) conj(Y V)
inline void complex_injections(const rcse::StateVector& s, const Eigen::MatrixXcd& y,
                               Eigen::VectorXd& p, Eigen::VectorXd& q) {
  const Eigen::VectorXcd v = rcse::complex_voltage(s);
  const Eigen::VectorXcd inj = v.cwiseProduct((y * v).conjugate());
  p = inj.real();
  q = inj.imag();
}

// central finite differences of the measurement function over free variables
inline Eigen::MatrixXd fd_jacobian(const rcse::StateVector& s, const rcse::SystemModel& model,
                                   rcse::Subset subset, double step = 1e-6) {
  const Eigen::VectorXd x0 = s.to_free();
  const int n_free = static_cast<int>(x0.size());
  const int n_bus = s.bus_count();
  Eigen::MatrixXd jac;
  for (int j = 0; j < n_free; ++j) {
    Eigen::VectorXd xp = x0, xm = x0;
    xp[j] += step;
    xm[j] -= step;
    const auto fp =
        rcse::eval_measurement_fn(rcse::StateVector::from_free(xp, n_bus, s.slack_bus), model, subset);
    const auto fm =
        rcse::eval_measurement_fn(rcse::StateVector::from_free(xm, n_bus, s.slack_bus), model, subset);
    if (jac.size() == 0) jac.setZero(fp.values.size(), n_free);
    jac.col(j) = (fp.values - fm.values) / (2.0 * step);
  }
  return jac;
}

}  // namespace oracles
