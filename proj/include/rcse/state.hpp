#pragma once

#include <string>

#include <Eigen/Dense>

#include "rcse/network.hpp"

namespace rcse {

// Polar bus-voltage state. The slack angle is the reference and stays 0; the
// free-variable packing is [angles at non-slack buses ascending, then all
// magnitudes], giving 2n-1 free variables.
struct StateVector {
  Eigen::VectorXd v_mag;  // p.u.
  Eigen::VectorXd v_ang;  // radians
  int slack_bus = 0;

  int bus_count() const { return static_cast<int>(v_mag.size()); }
  int free_count() const { return 2 * bus_count() - 1; }

  static StateVector flat(int n_bus, int slack) {
    StateVector s;
    s.v_mag = Eigen::VectorXd::Ones(n_bus);
    s.v_ang = Eigen::VectorXd::Zero(n_bus);
    s.slack_bus = slack;
    return s;
  }

  Eigen::VectorXd to_free() const {
    const int n = bus_count();
    Eigen::VectorXd x(free_count());
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (i != slack_bus) x[k++] = v_ang[i];
    x.tail(n) = v_mag;
    return x;
  }

  static StateVector from_free(const Eigen::VectorXd& x, int n_bus, int slack) {
    StateVector s;
    s.slack_bus = slack;
    s.v_ang = Eigen::VectorXd::Zero(n_bus);
    s.v_mag = x.tail(n_bus);
    int k = 0;
    for (int i = 0; i < n_bus; ++i)
      if (i != slack) s.v_ang[i] = x[k++];
    return s;
  }

  void add_free_step(const Eigen::VectorXd& dx) {
    const int n = bus_count();
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (i != slack_bus) v_ang[i] += dx[k++];
    v_mag += dx.tail(n);
  }

  // [v_mag; v_ang] stacked; used for state-space distances
  Eigen::VectorXd concat() const {
    Eigen::VectorXd out(2 * bus_count());
    out.head(bus_count()) = v_mag;
    out.tail(bus_count()) = v_ang;
    return out;
  }
};

// flat start honoring generator voltage setpoints
inline StateVector flat_start(const NetworkCase& net) {
  StateVector s = StateVector::flat(net.bus_count(), net.slack_index());
  for (const auto& g : net.generators) s.v_mag[g.bus] = g.v_set;
  return s;
}

inline double state_distance2(const StateVector& a, const StateVector& b) {
  return (a.concat() - b.concat()).squaredNorm();
}

// Values aligned with a plan's channel subset; plan_id records provenance.
struct MeasurementVector {
  Eigen::VectorXd values;
  std::string plan_id;
};

}  // namespace rcse
