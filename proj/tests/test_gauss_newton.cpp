#include <catch2/catch_amalgamated.hpp>

#include "rcse/gauss_newton.hpp"
#include "rcse/measurement_model.hpp"
#include "rcse/random.hpp"
#include "support/fixtures.hpp"

using namespace rcse;

namespace {

// residual/constraint builders over a plan: r = diag(w) (z - h(x))
EqConstrainedWlsProblem wls_problem(const SystemModel& model, const Eigen::VectorXd& z_all,
                                    bool with_constraints) {
  EqConstrainedWlsProblem p;
  const Eigen::VectorXd w = model.plan.weight;
  p.residual = [model, z_all, w](const StateVector& s) {
    return Eigen::VectorXd(
        (w.array() * (z_all - eval_measurement_fn(s, model, Subset::All).values).array()));
  };
  p.residual_jacobian = [model, w](const StateVector& s) {
    return Eigen::MatrixXd(
        (-measurement_jacobian(s, model, Subset::All)).array().colwise() * w.array());
  };
  if (with_constraints) {
    p.constraint = [model](const StateVector& s) {
      return eval_measurement_fn(s, model, Subset::ZeroInjection).values;
    };
    p.constraint_jacobian = [model](const StateVector& s) {
      return measurement_jacobian(s, model, Subset::ZeroInjection);
    };
  }
  p.x0 = flat_start(model.net);
  return p;
}

// physically plausible random state: a power-flow solution of scaled loads
StateVector random_operating_state(const NetworkCase& net, const AdmittanceMatrix& ybus,
                                   Rng& rng) {
  InjectionSpec spec;
  spec.p.setZero(net.bus_count());
  spec.q.setZero(net.bus_count());
  for (int i = 0; i < net.bus_count(); ++i) {
    spec.p[i] = -net.buses[i].load_p * rng.uniform(0.6, 1.4);
    spec.q[i] = -net.buses[i].load_q * rng.uniform(0.6, 1.4);
  }
  for (const auto& g : net.generators) spec.p[g.bus] += g.p_set;
  const auto sol = solve_powerflow(net, ybus, spec, flat_start(net));
  REQUIRE(sol.converged);
  return sol.state;
}

}  // namespace

TEST_CASE("identity model solves in one iteration") {
  EqConstrainedWlsProblem p;
  const Eigen::VectorXd target = Eigen::VectorXd::LinSpaced(5, -1.0, 2.0);
  p.residual = [target](const StateVector& s) {
    return Eigen::VectorXd(s.to_free() - target);
  };
  p.residual_jacobian = [](const StateVector& s) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(s.free_count(), s.free_count()));
  };
  p.x0 = StateVector::flat(3, 0);
  const auto [x, rep] = solve_eq_wls(p);
  REQUIRE(rep.converged);
  CHECK(rep.iterations <= 2);
  CHECK((x.to_free() - target).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("noiseless full-measurement inversion recovers the state") {
  for (const char* name : {"ieee33", "ieee39"}) {
    const auto net = fixtures::load(name);
    const auto ybus = build_admittance(net);
    const auto plan = plan_measurements(net, RedundancyLevel::High, 8);
    const SystemModel model{net, ybus, plan};
    Rng rng(19);
    for (int trial = 0; trial < 3; ++trial) {
      const auto truth = random_operating_state(net, ybus, rng);
      const auto z = eval_measurement_fn(truth, model, Subset::All).values;
      // zero-injection equalities carry the rows that make the full set
      // observable on the 39-bus system
      auto p = wls_problem(model, z, true);
      const auto [x, rep] = solve_eq_wls(p);
      REQUIRE(rep.converged);
      CHECK((x.v_mag - truth.v_mag).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((x.v_ang - truth.v_ang).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("zero-injection equalities hold where the unconstrained solve drifts") {
  const auto net = fixtures::load("ieee39");
  const auto ybus = build_admittance(net);
  const auto plan = plan_measurements(net, RedundancyLevel::High, 3);
  const SystemModel model{net, ybus, plan};

  // physically consistent truth: a power-flow solution, so h^z(truth) = 0
  InjectionSpec spec;
  spec.p.setZero(net.bus_count());
  spec.q.setZero(net.bus_count());
  for (int i = 0; i < net.bus_count(); ++i) {
    spec.p[i] = -net.buses[i].load_p;
    spec.q[i] = -net.buses[i].load_q;
  }
  for (const auto& g : net.generators) spec.p[g.bus] += g.p_set;
  const auto truth = solve_powerflow(net, ybus, spec, flat_start(net)).state;

  Eigen::VectorXd z = eval_measurement_fn(truth, model, Subset::All).values;
  Rng rng(4);
  for (int i = 0; i < z.size(); ++i) z[i] += rng.normal(0.0, plan.sigma[i]);

  auto constrained = wls_problem(model, z, true);
  const auto [xc, repc] = solve_eq_wls(constrained);
  REQUIRE(repc.converged);
  const auto resc = eval_measurement_fn(xc, {net, ybus, plan}, Subset::ZeroInjection).values;
  CHECK(resc.cwiseAbs().maxCoeff() < 1e-8);

  auto unconstrained = wls_problem(model, z, false);
  const auto [xu, repu] = solve_eq_wls(unconstrained);
  REQUIRE(repu.converged);
  const auto resu = eval_measurement_fn(xu, {net, ybus, plan}, Subset::ZeroInjection).values;
  CHECK(resu.cwiseAbs().maxCoeff() > 1e-6);  // noise leaks into the balance
}

TEST_CASE("iteration cap returns the best iterate flagged non-converged") {
  EqConstrainedWlsProblem p;
  // residual whose optimum is far from the start so 2 iterations cannot land
  p.residual = [](const StateVector& s) {
    Eigen::VectorXd r(2);
    const auto x = s.to_free();
    r << std::sin(3.0 * x[0]) + 0.5, 10.0 * (x[1] - x[0] * x[0]);
    return r;
  };
  p.residual_jacobian = [](const StateVector& s) {
    const auto x = s.to_free();
    Eigen::MatrixXd j(2, 3);
    j.setZero();
    j(0, 0) = 3.0 * std::cos(3.0 * x[0]);
    j(1, 0) = -20.0 * x[0];
    j(1, 1) = 10.0;
    return j;
  };
  p.x0 = StateVector::flat(2, 0);
  p.x0.v_ang[1] = 2.0;
  p.options.max_iterations = 2;
  const auto [x, rep] = solve_eq_wls(p);
  CHECK_FALSE(rep.converged);
  CHECK(rep.iterations == 2);
  CHECK_FALSE(rep.message.empty());
}
