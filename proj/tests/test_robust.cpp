#include <complex>

#include <catch2/catch_amalgamated.hpp>

#include "rcse/estimators.hpp"
#include "rcse/robust.hpp"
#include "support/toy_model.hpp"

using namespace rcse;

using toy::TwoBusToy;


TEST_CASE("collapse: at the minimum radius the robust estimate is the vanilla one") {
  TwoBusToy toy;
  const auto model = toy.model();
  auto [x_v, neighbors] = vanilla_estimate(model, toy.window, toy.z_a_t, toy.k);
  const Eigen::VectorXd d =
      context_distances(toy.window, toy.z_a_t, model.plan.weights_for(Subset::Available));
  const double rho_min = min_feasible_rho(d, toy.k);
  const auto r = robust_estimate(model, toy.window, toy.z_a_t, toy.k, x_v, rho_min);
  REQUIRE(r.converged);
  CHECK((r.x.v_mag - x_v.v_mag).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((r.x.v_ang - x_v.v_ang).cwiseAbs().maxCoeff() < 1e-5);
  // only feasible weighting: uniform on the K nearest
  for (int s = 0; s < 5; ++s)
    CHECK(r.worst_weights[s] == Catch::Approx(s < 2 ? 0.5 : 0.0).margin(1e-9));
}

TEST_CASE("radius below the feasible minimum is rejected") {
  TwoBusToy toy;
  const auto model = toy.model();
  auto [x_v, neighbors] = vanilla_estimate(model, toy.window, toy.z_a_t, toy.k);
  const Eigen::VectorXd d =
      context_distances(toy.window, toy.z_a_t, model.plan.weights_for(Subset::Available));
  REQUIRE_THROWS_AS(
      robust_estimate(model, toy.window, toy.z_a_t, toy.k, x_v, 0.5 * min_feasible_rho(d, toy.k)),
      std::invalid_argument);
}

TEST_CASE("weights stay inside the ambiguity polytope at every radius") {
  TwoBusToy toy;
  const auto model = toy.model();
  const auto grid = solve_rho_grid(model, toy.window, toy.z_a_t, toy.k, 8);
  const Eigen::VectorXd d =
      context_distances(toy.window, toy.z_a_t, model.plan.weights_for(Subset::Available));
  for (std::size_t c = 0; c < grid.candidates.size(); ++c) {
    const auto& cand = grid.candidates[c];
    CHECK(cand.worst_weights.minCoeff() > -1e-10);
    CHECK(cand.worst_weights.maxCoeff() < 1.0 / toy.k + 1e-10);
    CHECK(cand.worst_weights.sum() == Catch::Approx(1.0).margin(1e-10));
    CHECK(cand.worst_weights.dot(d) <= grid.grid.values[c] + 1e-8);
    CHECK(cand.duality_gap <= 1e-7 * (1.0 + std::abs(cand.objective)));
    CHECK(cand.dual_feasibility <= 1e-7 * (1.0 + std::abs(cand.objective)));
    CHECK(cand.lambda.minCoeff() > -1e-10);
    CHECK(cand.mu2 > -1e-12);
  }
}

TEST_CASE("worst-case objective is nondecreasing in rho, never above the warm start") {
  TwoBusToy toy;
  const auto model = toy.model();
  const auto grid = solve_rho_grid(model, toy.window, toy.z_a_t, toy.k, 12);
  for (std::size_t c = 1; c < grid.candidates.size(); ++c)
    CHECK(grid.candidates[c].objective >= grid.candidates[c - 1].objective - 1e-12);
  for (std::size_t c = 0; c < grid.candidates.size(); ++c) {
    const auto at_warm = evaluate_worst_case(model, toy.window, toy.z_a_t, toy.k,
                                             grid.grid.values[c], grid.vanilla);
    CHECK(grid.candidates[c].objective <= at_warm.objective + 1e-12);
  }
}

TEST_CASE("grid oracle: solver matches a 400x400 brute-force state scan") {
  TwoBusToy toy;
  const auto model = toy.model();
  auto [x_v, neighbors] = vanilla_estimate(model, toy.window, toy.z_a_t, toy.k);
  const Eigen::VectorXd d =
      context_distances(toy.window, toy.z_a_t, model.plan.weights_for(Subset::Available));
  const double rho = 0.5 * (min_feasible_rho(d, toy.k) + d.maxCoeff());

  const auto r = robust_estimate(model, toy.window, toy.z_a_t, toy.k, x_v, rho);
  REQUIRE(r.converged);

  const double th_lo = x_v.v_ang[1] - 0.06, th_hi = x_v.v_ang[1] + 0.06;
  const double v_lo = x_v.v_mag[1] - 0.06, v_hi = x_v.v_mag[1] + 0.06;
  REQUIRE(r.x.v_ang[1] > th_lo);
  REQUIRE(r.x.v_ang[1] < th_hi);
  REQUIRE(r.x.v_mag[1] > v_lo);
  REQUIRE(r.x.v_mag[1] < v_hi);

  double best = 1e300;
  for (int i = 0; i < 400; ++i) {
    const double th = th_lo + (th_hi - th_lo) * i / 399.0;
    for (int j = 0; j < 400; ++j) {
      const double v = v_lo + (v_hi - v_lo) * j / 399.0;
      best = std::min(best, toy::worst_case_at(toy, th, v, rho, d));
    }
  }
  CHECK(std::abs(r.objective - best) < 1e-4);
}
