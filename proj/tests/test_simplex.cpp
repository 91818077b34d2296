#include <catch2/catch_amalgamated.hpp>

#include "rcse/random.hpp"
#include "rcse/simplex.hpp"

using namespace rcse;

namespace {

// Vertex enumeration for lb = 0 problems: every optimum sits on some n active
// constraints drawn from the inequality rows and coordinate planes, with
// equality rows always active.
double enumerate_best(const DenseLp& lp, bool& feasible) {
  const int n = lp.vars();
  const int m_ub = lp.ub_rows();
  const int m_eq = lp.eq_rows();
  feasible = false;
  double best = lp.maximize ? -1e300 : 1e300;

  const int total = m_ub + n;  // rows then coordinate planes
  std::vector<int> pick(n);
  const int need = n - m_eq;
  if (need < 0) return best;

  std::function<void(int, int)> recurse = [&](int start, int chosen) {
    if (chosen == need) {
      Eigen::MatrixXd a(n, n);
      Eigen::VectorXd b(n);
      for (int e = 0; e < m_eq; ++e) {
        a.row(e) = lp.a_eq.row(e);
        b[e] = lp.b_eq[e];
      }
      for (int k = 0; k < need; ++k) {
        const int c = pick[k];
        if (c < m_ub) {
          a.row(m_eq + k) = lp.a_ub.row(c);
          b[m_eq + k] = lp.b_ub[c];
        } else {
          a.row(m_eq + k).setZero();
          a(m_eq + k, c - m_ub) = 1.0;
          b[m_eq + k] = 0.0;
        }
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      if (!lu.isInvertible()) return;
      const Eigen::VectorXd x = lu.solve(b);
      if ((x.array() < -1e-9).any()) return;
      if (m_ub && ((lp.a_ub * x - lp.b_ub).array() > 1e-9).any()) return;
      if (m_eq && (lp.a_eq * x - lp.b_eq).cwiseAbs().maxCoeff() > 1e-9) return;
      feasible = true;
      const double v = lp.c.dot(x);
      best = lp.maximize ? std::max(best, v) : std::min(best, v);
      return;
    }
    for (int c = start; c < total; ++c) {
      pick[chosen] = c;
      recurse(c + 1, chosen + 1);
    }
  };
  recurse(0, 0);
  return best;
}

}  // namespace

TEST_CASE("max x subject to x <= 1 gives unit shadow price") {
  DenseLp lp;
  lp.c = Eigen::VectorXd::Ones(1);
  lp.a_ub = Eigen::MatrixXd::Ones(1, 1);
  lp.b_ub = Eigen::VectorXd::Ones(1);
  const auto sol = solve_small_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.x[0] == Catch::Approx(1.0));
  CHECK(sol.objective == Catch::Approx(1.0));
  CHECK(sol.dual_ub[0] == Catch::Approx(1.0));
  CHECK(std::abs(sol.objective - sol.dual_objective) < 1e-9 * (1 + std::abs(sol.objective)));
}

TEST_CASE("three-sample reweighting polytope: frozen vertex optimum") {
  // max 3w1 + 2w2 + w3 over w <= 1/2, sum w = 1, d.w <= 1, w >= 0
  DenseLp lp;
  lp.c = Eigen::Vector3d(3.0, 2.0, 1.0);
  lp.a_ub.resize(4, 3);
  lp.a_ub << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0.1, 0.2, 0.3;
  lp.b_ub.resize(4);
  lp.b_ub << 0.5, 0.5, 0.5, 1.0;
  lp.a_eq = Eigen::MatrixXd::Ones(1, 3);
  lp.b_eq = Eigen::VectorXd::Ones(1);
  const auto sol = solve_small_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective == Catch::Approx(2.5));
  CHECK(sol.x[0] == Catch::Approx(0.5));
  CHECK(sol.x[1] == Catch::Approx(0.5));
  CHECK(sol.x[2] == Catch::Approx(0.0).margin(1e-12));
  bool feasible = false;
  CHECK(enumerate_best(lp, feasible) == Catch::Approx(2.5));
  CHECK(feasible);
}

TEST_CASE("statuses: infeasible and unbounded are detected") {
  DenseLp infeas;
  infeas.c = Eigen::VectorXd::Ones(1);
  infeas.a_ub = Eigen::MatrixXd::Ones(1, 1);
  infeas.b_ub = -Eigen::VectorXd::Ones(1);  // x <= -1 with x >= 0
  CHECK(solve_small_lp(infeas).status == LpStatus::Infeasible);

  DenseLp unb;
  unb.c = Eigen::VectorXd::Ones(1);  // max x, x >= 0, no rows
  CHECK(solve_small_lp(unb).status == LpStatus::Unbounded);
}

TEST_CASE("free variables and finite upper bounds work") {
  // min y subject to y >= x - 1, y >= -x + 0.2, 0 <= x <= 2, y free
  DenseLp lp;
  lp.maximize = false;
  lp.c.resize(2);
  lp.c << 0.0, 1.0;
  lp.a_ub.resize(2, 2);
  lp.a_ub << 1.0, -1.0, -1.0, -1.0;
  lp.b_ub.resize(2);
  lp.b_ub << 1.0, -0.2;
  lp.lb.resize(2);
  lp.lb << 0.0, -std::numeric_limits<double>::infinity();
  lp.ub.resize(2);
  lp.ub << 2.0, std::numeric_limits<double>::infinity();
  const auto sol = solve_small_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.x[0] == Catch::Approx(0.6));
  CHECK(sol.x[1] == Catch::Approx(-0.4));
  CHECK(std::abs(sol.objective - sol.dual_objective) < 1e-9 * (1 + std::abs(sol.objective)));
}

TEST_CASE("random LPs agree with vertex enumeration, duality gap tight") {
  Rng rng(2024);
  int solved = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    const int m = 1 + static_cast<int>(rng.below(5));
    DenseLp lp;
    lp.maximize = rng.uniform() < 0.5;
    lp.c.resize(n);
    for (int j = 0; j < n; ++j) lp.c[j] = rng.uniform(-1.0, 1.0);
    lp.a_ub.resize(m + 1, n);
    lp.b_ub.resize(m + 1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) lp.a_ub(i, j) = rng.uniform(-1.0, 1.0);
      lp.b_ub[i] = rng.uniform(0.05, 1.5);  // x = 0 satisfies the row
    }
    lp.a_ub.row(m).setOnes();  // sum x <= R keeps the problem bounded
    lp.b_ub[m] = rng.uniform(1.0, 4.0);
    if (rng.uniform() < 0.3) {
      lp.a_eq.resize(1, n);
      Eigen::VectorXd x0(n);
      for (int j = 0; j < n; ++j) {
        lp.a_eq(0, j) = rng.uniform(-1.0, 1.0);
        x0[j] = rng.uniform(0.0, 0.3);
      }
      lp.b_eq = lp.a_eq * x0;  // feasible by construction
    }
    const auto sol = solve_small_lp(lp);
    bool feasible = false;
    const double oracle = enumerate_best(lp, feasible);
    if (!feasible) {
      CHECK(sol.status == LpStatus::Infeasible);
      continue;
    }
    REQUIRE(sol.status == LpStatus::Optimal);
    ++solved;
    CHECK(std::abs(sol.objective - oracle) < 1e-8 * (1.0 + std::abs(oracle)));
    CHECK(std::abs(sol.objective - sol.dual_objective) <
          1e-9 * (1.0 + std::abs(sol.objective)));
    // primal feasibility and complementary slackness of the returned pair
    CHECK(((lp.a_ub * sol.x - lp.b_ub).array() < 1e-9).all());
    for (int i = 0; i < lp.ub_rows(); ++i) {
      const double slack = lp.b_ub[i] - lp.a_ub.row(i).dot(sol.x);
      CHECK(std::abs(sol.dual_ub[i] * slack) < 1e-8 * (1.0 + std::abs(sol.objective)));
      if (lp.maximize)
        CHECK(sol.dual_ub[i] > -1e-9);
      else
        CHECK(sol.dual_ub[i] < 1e-9);
    }
  }
  CHECK(solved > 600);  // the generator rarely produces infeasible cells
}
