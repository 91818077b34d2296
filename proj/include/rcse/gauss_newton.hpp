#pragma once

#include <functional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "rcse/state.hpp"

namespace rcse {

struct WlsOptions {
  double step_tol = 1e-8;        // infinity norm of the undamped Newton step
  double grad_tol = 1e-8;        // infinity norm of the Lagrangian gradient
  double constraint_tol = 1e-8;  // infinity norm of c(x) at the returned state
  int max_iterations = 50;
  double merit_penalty = 1e6;  // weight of ||c||^2 in the line-search merit
  int max_halvings = 30;
  int restoration_steps = 8;  // final least-norm Newton polish of c(x) = 0
};

struct WlsReport {
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;  // ||r||^2 at the returned state
  double grad_norm = 0.0;
  double constraint_violation = 0.0;
  std::string message;
};

// min ||r(x)||^2 s.t. c(x) = 0 with weights already applied inside r.
// Residual convention r = W (z - h(x)), so the residual Jacobian is -W H.
struct EqConstrainedWlsProblem {
  std::function<Eigen::VectorXd(const StateVector&)> residual;
  std::function<Eigen::MatrixXd(const StateVector&)> residual_jacobian;
  std::function<Eigen::VectorXd(const StateVector&)> constraint;          // may be empty-sized
  std::function<Eigen::MatrixXd(const StateVector&)> constraint_jacobian;
  StateVector x0;
  WlsOptions options;
};

// Gauss-Newton with equality constraints. Each iteration solves the
// augmented KKT system
//   [ J'J  C' ] [dx]   [-J'r]
//   [ C    0  ] [nu] = [-c  ]
// then damps the step by halving against ||r||^2 + penalty ||c||^2.
// A Levenberg shift on the J'J block covers rank-deficient iterates (an
// injection-only measurement set is singular exactly at the flat start).
inline std::pair<StateVector, WlsReport> solve_eq_wls(const EqConstrainedWlsProblem& problem) {
  const WlsOptions& opt = problem.options;
  StateVector x = problem.x0;
  x.v_ang[x.slack_bus] = 0.0;
  const int n = x.free_count();

  WlsReport report;

  auto merit = [&](const StateVector& s, Eigen::VectorXd& r, Eigen::VectorXd& c) {
    r = problem.residual(s);
    c = problem.constraint ? problem.constraint(s) : Eigen::VectorXd();
    return r.squaredNorm() + opt.merit_penalty * c.squaredNorm();
  };

  Eigen::VectorXd r, c;
  double merit_x = merit(x, r, c);

  StateVector best_x = x;
  double best_merit = merit_x;
  auto note_best = [&](const StateVector& s, double m) {
    if (m <= best_merit) {
      best_merit = m;
      best_x = s;
    }
  };

  for (int it = 0; it < opt.max_iterations; ++it) {
    report.iterations = it + 1;
    const Eigen::MatrixXd jac = problem.residual_jacobian(x);
    const Eigen::MatrixXd cjac =
        problem.constraint_jacobian ? problem.constraint_jacobian(x) : Eigen::MatrixXd(0, n);
    const int mc = static_cast<int>(cjac.rows());

    Eigen::MatrixXd normal = jac.transpose() * jac;
    const Eigen::VectorXd grad_half = jac.transpose() * r;  // (1/2) d||r||^2/dx

    Eigen::MatrixXd kkt(n + mc, n + mc);
    Eigen::VectorXd rhs(n + mc);
    kkt.setZero();
    kkt.topLeftCorner(n, n) = normal;
    if (mc > 0) {
      kkt.topRightCorner(n, mc) = cjac.transpose();
      kkt.bottomLeftCorner(mc, n) = cjac;
      rhs.tail(mc) = -c;
    }
    rhs.head(n) = -grad_half;

    // solve, shifting the Gauss-Newton block if the system is singular
    Eigen::VectorXd sol;
    bool solved = false;
    const double diag_scale = std::max(1.0, normal.diagonal().maxCoeff());
    double shift = 0.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
      sol = lu.solve(rhs);
      if (sol.allFinite() && (kkt * sol - rhs).norm() <= 1e-8 * (1.0 + rhs.norm())) {
        solved = true;
        break;
      }
      shift = shift == 0.0 ? 1e-12 * diag_scale : shift * 100.0;
      kkt.topLeftCorner(n, n) = normal + shift * Eigen::MatrixXd::Identity(n, n);
    }
    if (!solved) {
      report.message = "singular KKT system at iteration " + std::to_string(it);
      break;
    }

    const Eigen::VectorXd dx = sol.head(n);
    const Eigen::VectorXd nu = sol.tail(mc);

    Eigen::VectorXd lagr_grad = 2.0 * grad_half;
    if (mc > 0) lagr_grad += cjac.transpose() * nu;
    report.grad_norm = lagr_grad.cwiseAbs().maxCoeff();
    report.constraint_violation = mc > 0 ? c.cwiseAbs().maxCoeff() : 0.0;

    const bool step_small = dx.cwiseAbs().maxCoeff() < opt.step_tol;
    const bool grad_small = report.grad_norm < opt.grad_tol;
    if (step_small || grad_small) {
      // stationary; any residual constraint violation is handled by the
      // restoration phase below (the squared-penalty merit is inexact)
      report.converged = true;
      note_best(x, merit_x);
      break;
    }

    // halving line search on the merit function
    double alpha = 1.0;
    StateVector x_trial = x;
    Eigen::VectorXd r_trial, c_trial;
    double merit_trial = 0.0;
    bool improved = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      x_trial = x;
      x_trial.add_free_step(alpha * dx);
      merit_trial = merit(x_trial, r_trial, c_trial);
      if (std::isfinite(merit_trial) && merit_trial < merit_x) {
        improved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!improved) {
      // 30 halvings reach alpha ~ 1e-9; failing to improve the merit at that
      // resolution means the directional derivative is nonnegative within
      // double precision, i.e. the iterate is numerically stationary
      report.converged = true;
      report.message = "stopped at merit resolution, iteration " + std::to_string(it);
      note_best(x, merit_x);
      break;
    }
    x = x_trial;
    r = r_trial;
    c = c_trial;
    merit_x = merit_trial;
    note_best(x, merit_x);
  }

  if (!report.converged && report.message.empty())
    report.message = "iteration cap reached";
  StateVector ret = report.converged ? x : best_x;

  // feasibility restoration: least-norm Newton corrections drive c(x) to
  // machine precision while moving x only O(||c||), leaving the stationarity
  // achieved above intact to first order
  if (problem.constraint) {
    Eigen::VectorXd c_now = problem.constraint(ret);
    for (int step = 0; step < opt.restoration_steps && c_now.size(); ++step) {
      const double viol = c_now.cwiseAbs().maxCoeff();
      if (viol < 1e-2 * opt.constraint_tol) break;
      const Eigen::MatrixXd cjac = problem.constraint_jacobian(ret);
      const Eigen::VectorXd correction =
          cjac.transpose() *
          (cjac * cjac.transpose())
              .ldlt()
              .solve(-c_now);
      if (!correction.allFinite()) break;
      StateVector trial = ret;
      trial.add_free_step(correction);
      const Eigen::VectorXd c_trial = problem.constraint(trial);
      if (c_trial.cwiseAbs().maxCoeff() >= viol) break;  // no contraction
      ret = trial;
      c_now = c_trial;
    }
  }

  const Eigen::VectorXd r_final = problem.residual(ret);
  const Eigen::VectorXd c_final = problem.constraint ? problem.constraint(ret) : Eigen::VectorXd();
  report.objective = r_final.squaredNorm();
  report.constraint_violation = c_final.size() ? c_final.cwiseAbs().maxCoeff() : 0.0;
  report.converged = report.converged && report.constraint_violation < opt.constraint_tol;
  return {ret, report};
}

}  // namespace rcse
