#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace rcse {

// Dense linear program. Bounds default to [0, +inf); a -inf lower bound makes
// the variable free (split internally). Exposed row duals follow the shadow
// price convention of the stated sense: for a maximize problem the dual of a
// binding <= row is nonnegative and  objective == dual_ub . b_ub +
// dual_eq . b_eq  (+ internal bound terms) at optimality.
struct DenseLp {
  Eigen::VectorXd c;
  bool maximize = true;
  Eigen::MatrixXd a_ub;
  Eigen::VectorXd b_ub;
  Eigen::MatrixXd a_eq;
  Eigen::VectorXd b_eq;
  Eigen::VectorXd lb;  // empty => zeros
  Eigen::VectorXd ub;  // empty => +inf

  int vars() const { return static_cast<int>(c.size()); }
  int ub_rows() const { return static_cast<int>(a_ub.rows()); }
  int eq_rows() const { return static_cast<int>(a_eq.rows()); }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;
  Eigen::VectorXd dual_ub;  // per a_ub row
  Eigen::VectorXd dual_eq;  // per a_eq row
  double objective = 0.0;
  double dual_objective = 0.0;
  int iterations = 0;
};

namespace lp_detail {

constexpr double kCostTol = 1e-9;
constexpr double kPivotTol = 1e-10;

// One simplex phase on the dense tableau. Bland's rule (lowest eligible
// index enters, tie on the leaving ratio broken by lowest basic index), which
// is deterministic and cannot cycle.
inline bool run_simplex(Eigen::MatrixXd& tab, Eigen::RowVectorXd& cost, std::vector<int>& basis,
                        const std::vector<bool>& allowed, int& iterations, bool* unbounded) {
  const int m = static_cast<int>(tab.rows());
  const int n = static_cast<int>(tab.cols()) - 1;
  if (unbounded) *unbounded = false;
  for (;;) {
    int enter = -1;
    for (int j = 0; j < n; ++j) {
      if (!allowed[j]) continue;
      if (cost[j] < -kCostTol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) return true;  // optimal for this phase

    int leave = -1;
    double best_ratio = 0.0;
    for (int i = 0; i < m; ++i) {
      const double a = tab(i, enter);
      if (a <= kPivotTol) continue;
      const double ratio = tab(i, n) / a;
      if (leave < 0 || ratio < best_ratio - 1e-12 ||
          (ratio < best_ratio + 1e-12 && basis[i] < basis[leave])) {
        leave = i;
        best_ratio = ratio;
      }
    }
    if (leave < 0) {
      if (unbounded) *unbounded = true;
      return false;
    }

    ++iterations;
    const double piv = tab(leave, enter);
    tab.row(leave) /= piv;
    for (int i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double f = tab(i, enter);
      if (f != 0.0) tab.row(i) -= f * tab.row(leave);
    }
    const double fc = cost[enter];
    if (fc != 0.0) cost -= fc * tab.row(leave);
    basis[leave] = enter;
  }
}

}  // namespace lp_detail

// Two-phase dense simplex with primal and dual output. The optimal basis is
// refactorized once at the end so both solutions satisfy their defining
// systems to machine precision rather than to accumulated-tableau precision.
inline LpSolution solve_small_lp(const DenseLp& lp) {
  using Eigen::MatrixXd;
  using Eigen::RowVectorXd;
  using Eigen::VectorXd;

  const int n0 = lp.vars();
  if (lp.a_ub.rows() != lp.b_ub.size() || lp.a_eq.rows() != lp.b_eq.size() ||
      (lp.a_ub.size() && lp.a_ub.cols() != n0) || (lp.a_eq.size() && lp.a_eq.cols() != n0))
    throw std::invalid_argument("solve_small_lp: inconsistent dimensions");

  const double inf = std::numeric_limits<double>::infinity();
  VectorXd lb = lp.lb.size() ? lp.lb : VectorXd::Zero(n0);
  VectorXd ub = lp.ub.size() ? lp.ub : VectorXd::Constant(n0, inf);

  // column mapping: finite-lb variables shift to u >= 0, free variables split
  struct Col {
    int var;
    double sign;
  };
  std::vector<Col> cols;
  VectorXd shift = VectorXd::Zero(n0);
  for (int j = 0; j < n0; ++j) {
    if (std::isfinite(lb[j])) {
      shift[j] = lb[j];
      cols.push_back({j, 1.0});
    } else {
      cols.push_back({j, 1.0});
      cols.push_back({j, -1.0});
    }
  }
  const int n_struct = static_cast<int>(cols.size());

  // rows: a_ub, a_eq, then internal bound rows for finite ub
  std::vector<int> bound_var;
  for (int j = 0; j < n0; ++j)
    if (std::isfinite(ub[j])) bound_var.push_back(j);
  const int m_ub = lp.ub_rows();
  const int m_eq = lp.eq_rows();
  const int m_bnd = static_cast<int>(bound_var.size());
  const int m = m_ub + m_eq + m_bnd;
  const int n_slack = m_ub + m_bnd;
  const int n_total = n_struct + n_slack + m;  // + artificials

  MatrixXd a = MatrixXd::Zero(m, n_total);
  VectorXd b(m);
  std::vector<double> row_sign(m, 1.0);
  std::vector<bool> row_is_ub(m, false);

  auto fill_structural = [&](int row, const Eigen::RowVectorXd& arow, double rhs) {
    for (int k = 0; k < n_struct; ++k) a(row, k) = arow[cols[k].var] * cols[k].sign;
    b[row] = rhs - arow * shift;
  };
  for (int i = 0; i < m_ub; ++i) {
    fill_structural(i, lp.a_ub.row(i), lp.b_ub[i]);
    a(i, n_struct + i) = 1.0;  // slack
    row_is_ub[i] = true;
  }
  for (int i = 0; i < m_eq; ++i) fill_structural(m_ub + i, lp.a_eq.row(i), lp.b_eq[i]);
  for (int i = 0; i < m_bnd; ++i) {
    const int row = m_ub + m_eq + i;
    const int j = bound_var[i];
    Eigen::RowVectorXd arow = Eigen::RowVectorXd::Zero(n0);
    arow[j] = 1.0;
    fill_structural(row, arow, ub[j]);
    a(row, n_struct + m_ub + i) = 1.0;
    row_is_ub[row] = true;
  }
  // make b nonnegative, artificial identity block
  for (int i = 0; i < m; ++i) {
    if (b[i] < 0.0) {
      a.row(i) *= -1.0;
      b[i] = -b[i];
      row_sign[i] = -1.0;
    }
    a(i, n_struct + n_slack + i) = 1.0;
  }

  // internal minimization objective over structural columns
  const double sense = lp.maximize ? -1.0 : 1.0;
  VectorXd c_int = VectorXd::Zero(n_total);
  for (int k = 0; k < n_struct; ++k) c_int[k] = sense * lp.c[cols[k].var] * cols[k].sign;

  MatrixXd tab(m, n_total + 1);
  tab.leftCols(n_total) = a;
  tab.col(n_total) = b;
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = n_struct + n_slack + i;

  LpSolution out;

  // phase 1: minimize the artificial sum
  {
    RowVectorXd cost = RowVectorXd::Zero(n_total + 1);
    for (int i = 0; i < m; ++i) cost -= tab.row(i);  // reduced costs of sum(artificials)
    for (int j = n_struct + n_slack; j < n_total; ++j) cost[j] = 0.0;
    std::vector<bool> allowed(n_total, true);
    bool unbounded = false;
    lp_detail::run_simplex(tab, cost, basis, allowed, out.iterations, &unbounded);
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis[i] >= n_struct + n_slack) infeas += tab(i, n_total);
    const double b_scale = m > 0 ? b.cwiseAbs().maxCoeff() : 0.0;
    if (infeas > 1e-8 * (1.0 + b_scale)) {
      out.status = LpStatus::Infeasible;
      return out;
    }
    // pivot lingering artificials out where possible
    for (int i = 0; i < m; ++i) {
      if (basis[i] < n_struct + n_slack) continue;
      int piv_col = -1;
      for (int j = 0; j < n_struct + n_slack; ++j)
        if (std::abs(tab(i, j)) > lp_detail::kPivotTol) {
          piv_col = j;
          break;
        }
      if (piv_col < 0) continue;  // redundant row, artificial stays at zero
      const double piv = tab(i, piv_col);
      tab.row(i) /= piv;
      for (int r = 0; r < m; ++r) {
        if (r == i) continue;
        const double f = tab(r, piv_col);
        if (f != 0.0) tab.row(r) -= f * tab.row(i);
      }
      basis[i] = piv_col;
    }
  }

  // phase 2
  {
    RowVectorXd cost(n_total + 1);
    for (int j = 0; j < n_total; ++j) cost[j] = c_int[j];
    cost[n_total] = 0.0;
    for (int i = 0; i < m; ++i) {
      const double cb = c_int[basis[i]];
      if (cb != 0.0) cost -= cb * tab.row(i);
    }
    std::vector<bool> allowed(n_total, true);
    for (int j = n_struct + n_slack; j < n_total; ++j) allowed[j] = false;
    bool unbounded = false;
    if (!lp_detail::run_simplex(tab, cost, basis, allowed, out.iterations, &unbounded)) {
      out.status = LpStatus::Unbounded;
      return out;
    }
  }

  // refactorize the optimal basis: exact basic solution and duals
  MatrixXd bmat(m, m);
  VectorXd cb(m);
  for (int i = 0; i < m; ++i) {
    bmat.col(i) = a.col(basis[i]);
    cb[i] = c_int[basis[i]];
  }
  Eigen::PartialPivLU<MatrixXd> blu(bmat);
  const VectorXd xb = blu.solve(b);
  const VectorXd y = bmat.transpose().partialPivLu().solve(cb);

  VectorXd u = VectorXd::Zero(n_total);
  for (int i = 0; i < m; ++i) u[basis[i]] = xb[i];
  out.x = shift;
  for (int k = 0; k < n_struct; ++k) out.x[cols[k].var] += cols[k].sign * u[k];

  out.dual_ub.resize(m_ub);
  for (int i = 0; i < m_ub; ++i) out.dual_ub[i] = sense * row_sign[i] * y[i];
  out.dual_eq.resize(m_eq);
  for (int i = 0; i < m_eq; ++i) out.dual_eq[i] = sense * row_sign[m_ub + i] * y[m_ub + i];

  out.objective = lp.c.dot(out.x);
  out.dual_objective = sense * y.dot(b) + lp.c.dot(shift);
  out.status = LpStatus::Optimal;
  return out;
}

}  // namespace rcse
