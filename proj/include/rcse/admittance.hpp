#pragma once

#include <complex>
#include <vector>

#include <Eigen/Sparse>

#include "rcse/network.hpp"

namespace rcse {

using Complex = std::complex<double>;

// Per-unit bus admittance matrix plus the branch pi-model coefficients used
// for flow evaluation:  I_f = y_ff V_f + y_ft V_t,  I_t = y_tf V_f + y_tt V_t.
struct AdmittanceMatrix {
  int n = 0;
  Eigen::SparseMatrix<Complex> y;
  std::vector<Complex> y_ff, y_ft, y_tf, y_tt;  // per branch; zero when out of service
};

inline AdmittanceMatrix build_admittance(const NetworkCase& net) {
  AdmittanceMatrix out;
  out.n = net.bus_count();
  const int nb = net.branch_count();
  out.y_ff.assign(nb, Complex(0, 0));
  out.y_ft.assign(nb, Complex(0, 0));
  out.y_tf.assign(nb, Complex(0, 0));
  out.y_tt.assign(nb, Complex(0, 0));

  std::vector<Eigen::Triplet<Complex>> trip;
  trip.reserve(static_cast<std::size_t>(4 * nb + out.n));

  for (int k = 0; k < nb; ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service) continue;
    if (br.r == 0.0 && br.x == 0.0)
      throw CaseError("branch " + std::to_string(k + 1) + ": zero series impedance");
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex ysh(0.0, br.b_charging / 2.0);
    const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
    const Complex y_ff = (ys + ysh) / (tap * std::conj(tap));
    const Complex y_ft = -ys / std::conj(tap);
    const Complex y_tf = -ys / tap;
    const Complex y_tt = ys + ysh;
    out.y_ff[k] = y_ff;
    out.y_ft[k] = y_ft;
    out.y_tf[k] = y_tf;
    out.y_tt[k] = y_tt;
    trip.emplace_back(br.from_bus, br.from_bus, y_ff);
    trip.emplace_back(br.from_bus, br.to_bus, y_ft);
    trip.emplace_back(br.to_bus, br.from_bus, y_tf);
    trip.emplace_back(br.to_bus, br.to_bus, y_tt);
  }
  for (int i = 0; i < out.n; ++i) {
    const auto& b = net.buses[i];
    if (b.shunt_g != 0.0 || b.shunt_b != 0.0)
      trip.emplace_back(i, i, Complex(b.shunt_g, b.shunt_b));
  }

  out.y.resize(out.n, out.n);
  out.y.setFromTriplets(trip.begin(), trip.end());  // duplicates summed
  out.y.makeCompressed();
  return out;
}

}  // namespace rcse
