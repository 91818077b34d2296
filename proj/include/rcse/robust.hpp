#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rcse/gauss_newton.hpp"
#include "rcse/simplex.hpp"
#include "rcse/state.hpp"

namespace rcse {

// Decision variables and certificates of the robust single-level problem
//   min_x,lambda,mu1,mu2  (1/K) sum lambda_s + mu1 + rho mu2
//   s.t. lambda_s + mu1 + mu2 d_s >= r_s(x),  lambda >= 0, mu2 >= 0, c(x) = 0
// where r_s(x) is the available residual term plus sample s's delayed term.
struct RobustNlpState {
  StateVector x;
  Eigen::VectorXd lambda;
  double mu1 = 0.0;
  double mu2 = 0.0;
  double rho = 0.0;
  Eigen::VectorXd worst_weights;  // argmax of the inner reweighting problem
  double objective = 0.0;         // certified worst-case value at x
  double duality_gap = 0.0;
  double dual_feasibility = 0.0;  // largest positive violation of a sample row
  bool converged = false;
  int rounds = 0;
  std::string message;
};

struct RobustNlpOptions {
  int max_rounds = 50;
  double rel_objective_tol = 1e-9;
  int mixture_refinements = 6;     // outer passes of the cycle-breaking line search
  int golden_iterations = 30;
};

// Hooks the estimation layer provides. available_term is the squared weighted
// available-measurement residual a(x) (its weight sum is 1, so it factors out
// of the reweighted objective); delayed_terms gives the per-sample squared
// weighted delayed residuals b_s(x); weighted_solve minimizes
// a(x) + sum_s w_s b_s(x) subject to the equality constraints.
struct RobustEvaluators {
  std::function<double(const StateVector&)> available_term;
  std::function<Eigen::VectorXd(const StateVector&)> delayed_terms;
  std::function<std::pair<StateVector, WlsReport>(const Eigen::VectorXd&, const StateVector&)>
      weighted_solve;
};

// smallest feasible radius: the mean of the K smallest distances
inline double min_feasible_rho(const Eigen::VectorXd& distances, int k) {
  std::vector<double> d(distances.data(), distances.data() + distances.size());
  std::sort(d.begin(), d.end());
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += d[i];
  return sum / k;
}

struct InnerLpResult {
  Eigen::VectorXd weights;
  Eigen::VectorXd lambda;
  double mu1_tilde = 0.0;  // equality dual before the available term is added back
  double mu2 = 0.0;
  double value = 0.0;  // max_w sum_s w_s b_s
  double dual_value = 0.0;
};

// Worst-case reweighting at a fixed state:
//   max_w sum w_s b_s   s.t. w_s <= 1/K, sum w = 1, sum w d_s <= rho, w >= 0.
// The distance row is scaled to unit magnitude before pivoting; the dual of
// that row is unscaled back into mu2.
inline InnerLpResult solve_ambiguity_lp(const Eigen::VectorXd& b_terms,
                                        const Eigen::VectorXd& distances, int k, double rho) {
  const int n = static_cast<int>(distances.size());
  const double kappa = std::max(distances.maxCoeff(), 1.0);

  DenseLp lp;
  lp.maximize = true;
  lp.c = b_terms;
  lp.a_ub = Eigen::MatrixXd::Zero(n + 1, n);
  lp.b_ub.resize(n + 1);
  for (int s = 0; s < n; ++s) {
    lp.a_ub(s, s) = 1.0;
    lp.b_ub[s] = 1.0 / k;
  }
  lp.a_ub.row(n) = (distances / kappa).transpose();
  lp.b_ub[n] = rho / kappa;
  lp.a_eq = Eigen::MatrixXd::Ones(1, n);
  lp.b_eq = Eigen::VectorXd::Ones(1);

  const LpSolution sol = solve_small_lp(lp);
  if (sol.status != LpStatus::Optimal)
    throw std::invalid_argument("ambiguity set is empty: rho is below the feasible minimum");

  InnerLpResult out;
  out.weights = sol.x;
  out.lambda = sol.dual_ub.head(n);
  out.mu2 = sol.dual_ub[n] / kappa;
  out.mu1_tilde = sol.dual_eq[0];
  out.value = sol.objective;
  out.dual_value = sol.dual_objective;
  return out;
}

// Two-step solve of the robust problem: the ambiguity polytope does not
// depend on x, so the scheme alternates the inner worst-case LP with the
// weighted equality-constrained least squares, damping the weights between
// rounds to suppress cycling. The dual warm start is the inner LP at the
// vanilla state; the returned duals certify the worst case at the returned
// state by LP strong duality.
inline RobustNlpState solve_robust_nlp(const StateVector& x_warm, const RobustEvaluators& ev,
                                       const Eigen::VectorXd& distances, int k, double rho,
                                       const RobustNlpOptions& opts = {}) {
  struct Eval {
    double a = 0.0;
    Eigen::VectorXd b;
    InnerLpResult lp;
    double objective = 0.0;
  };
  auto evaluate = [&](const StateVector& x) {
    Eval e;
    e.a = ev.available_term(x);
    e.b = ev.delayed_terms(x);
    e.lp = solve_ambiguity_lp(e.b, distances, k, rho);
    e.objective = e.a + e.lp.value;
    return e;
  };

  StateVector x = x_warm;
  Eval current = evaluate(x);  // step 1: duals at the fixed warm-start state

  StateVector best_x = x;
  Eval best = current;
  bool best_clean = true;
  auto improves = [](double candidate, double incumbent) {
    return candidate < incumbent - 1e-12 * (1.0 + std::abs(incumbent));
  };

  Eigen::VectorXd w = current.lp.weights;
  Eigen::VectorXd response_prev = current.lp.weights;
  Eigen::VectorXd response_last = current.lp.weights;
  double previous = current.objective;
  bool converged = false;
  int rounds = 0;

  for (rounds = 1; rounds <= opts.max_rounds; ++rounds) {
    auto [x_next, report] = ev.weighted_solve(w, x);
    const Eval e = evaluate(x_next);
    if (improves(e.objective, best.objective)) {
      best = e;
      best_x = x_next;
      best_clean = report.converged;
    }
    response_prev = response_last;
    response_last = e.lp.weights;
    const double decrease = previous - e.objective;
    if (std::abs(decrease) <= opts.rel_objective_tol * (1.0 + std::abs(previous))) {
      converged = true;  // genuinely settled
      break;
    }
    if (decrease < 0.0) break;  // worst case bounced: the saddle needs a mixture
    previous = e.objective;
    x = x_next;
    w = 0.5 * w + 0.5 * e.lp.weights;  // proximal damping
  }

  // The best response flips between worst-case vertices when the saddle
  // needs a mixture of them; the damped alternation then cycles. A golden
  // section over the segment between the two responses recovers the mixture.
  if (!converged) {
    Eigen::VectorXd seg_a = response_prev;
    Eigen::VectorXd seg_b = response_last;
    StateVector x_path = best_x;
    auto phi = [&](double t) {
      const Eigen::VectorXd wm = t * seg_a + (1.0 - t) * seg_b;
      auto [xm, report] = ev.weighted_solve(wm, x_path);
      x_path = xm;
      Eval e = evaluate(xm);
      if (improves(e.objective, best.objective)) {
        best = e;
        best_x = xm;
        best_clean = report.converged;
      }
      return e.objective;
    };
    for (int pass = 0; pass < opts.mixture_refinements; ++pass) {
      const double before = best.objective;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double lo = 0.0, hi = 1.0;
      double t1 = hi - gr * (hi - lo), t2 = lo + gr * (hi - lo);
      double f1 = phi(t1), f2 = phi(t2);
      for (int i = 0; i < opts.golden_iterations; ++i) {
        if (f1 <= f2) {
          hi = t2;
          t2 = t1;
          f2 = f1;
          t1 = hi - gr * (hi - lo);
          f1 = phi(t1);
        } else {
          lo = t1;
          t1 = t2;
          f1 = f2;
          t2 = lo + gr * (hi - lo);
          f2 = phi(t2);
        }
      }
      const double t_star = 0.5 * (lo + hi);
      const Eigen::VectorXd w_star = t_star * seg_a + (1.0 - t_star) * seg_b;
      phi(t_star);
      if (before - best.objective <
          opts.rel_objective_tol * (1.0 + std::abs(before))) {
        converged = true;
        break;
      }
      // continue along the segment between the refined mixture and the new
      // worst-case response at the refined state
      seg_a = w_star;
      seg_b = best.lp.weights;
    }
  }

  RobustNlpState out;
  out.x = best_x;
  out.rho = rho;
  out.lambda = best.lp.lambda;
  out.mu1 = best.lp.mu1_tilde + best.a;  // constant available term re-enters the equality dual
  out.mu2 = best.lp.mu2;
  out.worst_weights = best.lp.weights;
  out.objective = best.objective;
  out.duality_gap = std::abs((best.lp.dual_value + best.a) - best.objective);
  double violation = 0.0;
  for (int s = 0; s < distances.size(); ++s)
    violation = std::max(violation, best.b[s] - (best.lp.lambda[s] + best.lp.mu1_tilde +
                                                 best.lp.mu2 * distances[s]));
  out.dual_feasibility = std::max(0.0, violation);
  out.converged = converged && best_clean;
  out.rounds = rounds;
  if (!converged) out.message = "objective still improving at the refinement cap";
  else if (!best_clean) out.message = "inner least-squares solve did not converge";
  return out;
}

}  // namespace rcse
