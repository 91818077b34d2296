#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcse/gauss_newton.hpp"
#include "rcse/measurement_model.hpp"
#include "rcse/robust.hpp"
#include "rcse/state.hpp"

namespace rcse {

// one past instance: available and delayed measurements plus the
// retrospective estimate computed from the full set
struct HistorySample {
  int sample_id = 0;
  Eigen::VectorXd z_a;
  Eigen::VectorXd z_d;
  StateVector x_retro;
};

struct HistoryWindow {
  std::vector<HistorySample> samples;
  std::string plan_id;

  int size() const { return static_cast<int>(samples.size()); }
};

struct NeighborSet {
  std::vector<int> sample_ids;  // ascending distance, ties by ascending id
  std::vector<int> positions;   // matching positions inside the window
  Eigen::VectorXd distances;    // squared weighted distances, nondecreasing
};

struct RhoGrid {
  double rho_min = 0.0;
  double rho_max = 0.0;
  Eigen::VectorXd values;  // geometric between the bounds
  bool degenerate = false;
};

enum class Method { Retrospective, Vanilla, Rcse, Persistent, Anticipative };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Retrospective: return "retrospective";
    case Method::Vanilla: return "vanilla";
    case Method::Rcse: return "rcse";
    case Method::Persistent: return "persistent";
    default: return "anticipative";
  }
}

inline Method method_from_string(const std::string& s) {
  if (s == "retrospective") return Method::Retrospective;
  if (s == "vanilla") return Method::Vanilla;
  if (s == "rcse") return Method::Rcse;
  if (s == "persistent") return Method::Persistent;
  if (s == "anticipative") return Method::Anticipative;
  throw std::invalid_argument("unknown estimator '" + s + "'");
}

struct EstimateRecord {
  Method method = Method::Vanilla;
  StateVector x_hat;
  std::optional<double> rho_selected;
  std::optional<Eigen::VectorXd> validation_errors;  // E_c per grid candidate
  struct Flags {
    bool converged = true;
    int nonconverged_candidates = 0;
    bool degenerate_grid = false;
    bool not_implementable = false;  // anticipative: needs the test's own retrospective state
  } flags;
};

namespace detail {

// weighted residual stack [W_a (z_a - h_a); W_d (z_d_target - h_d)] with the
// zero-injection equalities attached
inline EqConstrainedWlsProblem stacked_problem(const SystemModel& model,
                                               const Eigen::VectorXd& z_a,
                                               const Eigen::VectorXd& z_d_target,
                                               const StateVector& start) {
  const Eigen::VectorXd w_a = model.plan.weights_for(Subset::Available);
  const Eigen::VectorXd w_d = model.plan.weights_for(Subset::Delayed);

  EqConstrainedWlsProblem p;
  p.residual = [model, z_a, z_d_target, w_a, w_d](const StateVector& s) {
    const Eigen::VectorXd ha = eval_measurement_fn(s, model, Subset::Available).values;
    const Eigen::VectorXd hd = eval_measurement_fn(s, model, Subset::Delayed).values;
    Eigen::VectorXd r(ha.size() + hd.size());
    r.head(ha.size()) = w_a.array() * (z_a - ha).array();
    r.tail(hd.size()) = w_d.array() * (z_d_target - hd).array();
    return r;
  };
  p.residual_jacobian = [model, w_a, w_d](const StateVector& s) {
    const Eigen::MatrixXd ha = measurement_jacobian(s, model, Subset::Available);
    const Eigen::MatrixXd hd = measurement_jacobian(s, model, Subset::Delayed);
    Eigen::MatrixXd j(ha.rows() + hd.rows(), ha.cols());
    j.topRows(ha.rows()) = (-ha).array().colwise() * w_a.array();
    j.bottomRows(hd.rows()) = (-hd).array().colwise() * w_d.array();
    return j;
  };
  if (!model.plan.zero_injection_buses.empty()) {
    p.constraint = [model](const StateVector& s) {
      return eval_measurement_fn(s, model, Subset::ZeroInjection).values;
    };
    p.constraint_jacobian = [model](const StateVector& s) {
      return measurement_jacobian(s, model, Subset::ZeroInjection);
    };
  }
  p.x0 = start;
  return p;
}

inline double weighted_distance2(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                 const Eigen::VectorXd& w) {
  return (w.array() * (a - b).array()).matrix().squaredNorm();
}

}  // namespace detail

// retrospective estimate: full measurement set, flat start
inline std::pair<StateVector, WlsReport> wls_estimate(const SystemModel& model,
                                                      const Eigen::VectorXd& z_a,
                                                      const Eigen::VectorXd& z_d) {
  auto p = detail::stacked_problem(model, z_a, z_d, flat_start(model.net));
  return solve_eq_wls(p);
}

// K samples with the smallest squared weighted context distances
inline NeighborSet knn_select(const HistoryWindow& window, const Eigen::VectorXd& z_a_t, int k,
                              const Eigen::VectorXd& weights) {
  if (k < 1 || k > window.size())
    throw std::invalid_argument("knn_select: K out of range");
  struct Entry {
    double dist;
    int sample_id;
    int pos;
  };
  std::vector<Entry> entries;
  entries.reserve(window.samples.size());
  for (int pos = 0; pos < window.size(); ++pos) {
    const auto& s = window.samples[pos];
    entries.push_back({detail::weighted_distance2(z_a_t, s.z_a, weights), s.sample_id, pos});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.sample_id < b.sample_id;
  });
  NeighborSet out;
  out.distances.resize(k);
  for (int i = 0; i < k; ++i) {
    out.sample_ids.push_back(entries[i].sample_id);
    out.positions.push_back(entries[i].pos);
    out.distances[i] = entries[i].dist;
  }
  return out;
}

// context distances of every window sample, in window order
inline Eigen::VectorXd context_distances(const HistoryWindow& window,
                                         const Eigen::VectorXd& z_a_t,
                                         const Eigen::VectorXd& weights) {
  Eigen::VectorXd d(window.size());
  for (int pos = 0; pos < window.size(); ++pos)
    d[pos] = detail::weighted_distance2(z_a_t, window.samples[pos].z_a, weights);
  return d;
}

// the K-NN objective value at a state; used to double-check the solver path
inline double vanilla_objective(const SystemModel& model, const HistoryWindow& window,
                                const NeighborSet& neighbors, const Eigen::VectorXd& z_a_t,
                                const StateVector& x) {
  const Eigen::VectorXd w_a = model.plan.weights_for(Subset::Available);
  const Eigen::VectorXd w_d = model.plan.weights_for(Subset::Delayed);
  const Eigen::VectorXd ha = eval_measurement_fn(x, model, Subset::Available).values;
  const Eigen::VectorXd hd = eval_measurement_fn(x, model, Subset::Delayed).values;
  double obj = (w_a.array() * (z_a_t - ha).array()).matrix().squaredNorm();
  for (int pos : neighbors.positions)
    obj += (w_d.array() * (window.samples[pos].z_d - hd).array()).matrix().squaredNorm() /
           neighbors.positions.size();
  return obj;
}

// Nearest-neighbor estimate: fits the available measurements plus the mean of
// the K neighbors' delayed measurements. The (1/K) sum of delayed residual
// terms equals the residual against their mean plus a constant, so the
// stacked solve minimizes the same objective.
inline std::pair<StateVector, NeighborSet> vanilla_estimate(const SystemModel& model,
                                                            const HistoryWindow& window,
                                                            const Eigen::VectorXd& z_a_t, int k,
                                                            WlsReport* report = nullptr) {
  const Eigen::VectorXd w_a = model.plan.weights_for(Subset::Available);
  NeighborSet neighbors = knn_select(window, z_a_t, k, w_a);
  Eigen::VectorXd z_d_mean = Eigen::VectorXd::Zero(model.plan.delayed_count());
  for (int pos : neighbors.positions) z_d_mean += window.samples[pos].z_d;
  z_d_mean /= static_cast<double>(k);
  auto problem = detail::stacked_problem(model, z_a_t, z_d_mean, flat_start(model.net));
  auto [x, rep] = solve_eq_wls(problem);
  if (report) *report = rep;
  return {std::move(x), std::move(neighbors)};
}

// data-driven radius range: mean K-NN distance up to the furthest sample,
// log-spaced
inline RhoGrid compute_rho_grid(const HistoryWindow& window, const Eigen::VectorXd& z_a_t, int k,
                                int cardinality, const Eigen::VectorXd& weights) {
  if (cardinality < 2) throw std::invalid_argument("compute_rho_grid: need at least 2 values");
  const Eigen::VectorXd d = context_distances(window, z_a_t, weights);
  RhoGrid grid;
  grid.rho_min = min_feasible_rho(d, k);
  grid.rho_max = d.maxCoeff();
  if (!(grid.rho_min > 0.0) || grid.rho_max <= grid.rho_min * (1.0 + 1e-12)) {
    grid.degenerate = true;
    grid.values = Eigen::VectorXd::Constant(1, grid.rho_max);
    return grid;
  }
  grid.values.resize(cardinality);
  const double log_lo = std::log(grid.rho_min);
  const double log_hi = std::log(grid.rho_max);
  for (int c = 0; c < cardinality; ++c)
    grid.values[c] =
        std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(c) / (cardinality - 1));
  grid.values[0] = grid.rho_min;
  grid.values[cardinality - 1] = grid.rho_max;
  return grid;
}

namespace detail {

inline RobustEvaluators make_robust_evaluators(const SystemModel& model,
                                               const HistoryWindow& window,
                                               const Eigen::VectorXd& z_a_t) {
  const Eigen::VectorXd w_a = model.plan.weights_for(Subset::Available);
  const Eigen::VectorXd w_d = model.plan.weights_for(Subset::Delayed);

  RobustEvaluators ev;
  ev.available_term = [model, z_a_t, w_a](const StateVector& x) {
    const Eigen::VectorXd ha = eval_measurement_fn(x, model, Subset::Available).values;
    return (w_a.array() * (z_a_t - ha).array()).matrix().squaredNorm();
  };
  // capturing the window by reference is safe: evaluators never outlive the
  // estimator call
  ev.delayed_terms = [model, &window, w_d](const StateVector& x) {
    const Eigen::VectorXd hd = eval_measurement_fn(x, model, Subset::Delayed).values;
    Eigen::VectorXd b(window.size());
    for (int pos = 0; pos < window.size(); ++pos)
      b[pos] =
          (w_d.array() * (window.samples[pos].z_d - hd).array()).matrix().squaredNorm();
    return b;
  };
  ev.weighted_solve = [model, &window, z_a_t](const Eigen::VectorXd& w,
                                              const StateVector& start) {
    Eigen::VectorXd z_d_mix = Eigen::VectorXd::Zero(model.plan.delayed_count());
    for (int pos = 0; pos < window.size(); ++pos)
      if (w[pos] != 0.0) z_d_mix += w[pos] * window.samples[pos].z_d;
    auto problem = detail::stacked_problem(model, z_a_t, z_d_mix, start);
    return solve_eq_wls(problem);
  };
  return ev;
}

}  // namespace detail

// worst-case objective of a fixed state under radius rho (certificate included)
inline RobustNlpState evaluate_worst_case(const SystemModel& model, const HistoryWindow& window,
                                          const Eigen::VectorXd& z_a_t, int k, double rho,
                                          const StateVector& x) {
  const auto ev = detail::make_robust_evaluators(model, window, z_a_t);
  const Eigen::VectorXd d =
      context_distances(window, z_a_t, model.plan.weights_for(Subset::Available));
  const double a = ev.available_term(x);
  const Eigen::VectorXd b = ev.delayed_terms(x);
  const InnerLpResult lp = solve_ambiguity_lp(b, d, k, rho);
  RobustNlpState out;
  out.x = x;
  out.rho = rho;
  out.lambda = lp.lambda;
  out.mu1 = lp.mu1_tilde + a;
  out.mu2 = lp.mu2;
  out.worst_weights = lp.weights;
  out.objective = a + lp.value;
  out.duality_gap = std::abs((lp.dual_value + a) - out.objective);
  double violation = 0.0;
  for (int s = 0; s < d.size(); ++s)
    violation = std::max(violation, b[s] - (lp.lambda[s] + lp.mu1_tilde + lp.mu2 * d[s]));
  out.dual_feasibility = std::max(0.0, violation);
  out.converged = true;
  return out;
}

inline RobustNlpState robust_estimate(const SystemModel& model, const HistoryWindow& window,
                                      const Eigen::VectorXd& z_a_t, int k,
                                      const StateVector& x_warm, double rho,
                                      const RobustNlpOptions& opts = {}) {
  const auto ev = detail::make_robust_evaluators(model, window, z_a_t);
  const Eigen::VectorXd d =
      context_distances(window, z_a_t, model.plan.weights_for(Subset::Available));
  return solve_robust_nlp(x_warm, ev, d, k, rho, opts);
}

// Shared grid machinery: solves every radius, then lets every candidate state
// compete under every radius (any feasible state upper-bounds the min, so
// picking the best is still exact minimization). The shared pool makes the
// worst-case objective nondecreasing in rho by construction and never worse
// than the vanilla warm start.
struct GridCandidates {
  RhoGrid grid;
  StateVector vanilla;
  NeighborSet neighbors;
  std::vector<RobustNlpState> candidates;  // per grid value, pool-polished
  bool vanilla_converged = true;
};

inline GridCandidates solve_rho_grid(const SystemModel& model, const HistoryWindow& window,
                                     const Eigen::VectorXd& z_a_t, int k, int cardinality) {
  GridCandidates out;
  WlsReport vrep;
  auto [xv, neighbors] = vanilla_estimate(model, window, z_a_t, k, &vrep);
  out.vanilla = std::move(xv);
  out.neighbors = std::move(neighbors);
  out.vanilla_converged = vrep.converged;
  out.grid = compute_rho_grid(window, z_a_t, k,  cardinality,
                              model.plan.weights_for(Subset::Available));

  const auto ev = detail::make_robust_evaluators(model, window, z_a_t);
  const Eigen::VectorXd d =
      context_distances(window, z_a_t, model.plan.weights_for(Subset::Available));

  const int n_rho = static_cast<int>(out.grid.values.size());
  out.candidates.resize(n_rho);
  for (int c = 0; c < n_rho; ++c)
    out.candidates[c] = solve_robust_nlp(out.vanilla, ev, d, k, out.grid.values[c]);

  // pool polish: evaluate every candidate state (plus the warm start) under
  // every radius and keep the best per radius
  std::vector<const StateVector*> pool;
  pool.push_back(&out.vanilla);
  for (const auto& cand : out.candidates) pool.push_back(&cand.x);
  std::vector<double> a_terms(pool.size());
  std::vector<Eigen::VectorXd> b_terms(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    a_terms[i] = ev.available_term(*pool[i]);
    b_terms[i] = ev.delayed_terms(*pool[i]);
  }
  for (int c = 0; c < n_rho; ++c) {
    auto& cand = out.candidates[c];
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const InnerLpResult lp = solve_ambiguity_lp(b_terms[i], d, k, out.grid.values[c]);
      const double objective = a_terms[i] + lp.value;
      if (objective < cand.objective - 1e-12 * (1.0 + std::abs(cand.objective))) {
        cand.x = *pool[i];
        cand.objective = objective;
        cand.lambda = lp.lambda;
        cand.mu1 = lp.mu1_tilde + a_terms[i];
        cand.mu2 = lp.mu2;
        cand.worst_weights = lp.weights;
        cand.duality_gap = std::abs((lp.dual_value + a_terms[i]) - objective);
        double violation = 0.0;
        for (int s = 0; s < d.size(); ++s)
          violation = std::max(violation,
                               b_terms[i][s] - (lp.lambda[s] + lp.mu1_tilde + lp.mu2 * d[s]));
        cand.dual_feasibility = std::max(0.0, violation);
      }
    }
  }
  return out;
}

namespace detail {

// Eq-style validation error of a candidate against reference states, plus the
// argmin selection shared by the tuned estimators. Non-converged candidates
// are skipped unless nothing converged.
inline EstimateRecord select_candidate(const GridCandidates& grid, Method method,
                                       const std::function<double(const StateVector&)>& error) {
  EstimateRecord rec;
  rec.method = method;
  rec.flags.degenerate_grid = grid.grid.degenerate;
  const int n = static_cast<int>(grid.candidates.size());
  Eigen::VectorXd e(n);
  int best = -1;
  bool any_converged = false;
  for (int c = 0; c < n; ++c) {
    e[c] = error(grid.candidates[c].x);
    if (!grid.candidates[c].converged) ++rec.flags.nonconverged_candidates;
    any_converged = any_converged || grid.candidates[c].converged;
  }
  for (int c = 0; c < n; ++c) {
    if (any_converged && !grid.candidates[c].converged) continue;
    if (best < 0 || e[c] < e[best]) best = c;  // ties keep the smallest radius
  }
  rec.x_hat = grid.candidates[best].x;
  rec.rho_selected = grid.grid.values[best];
  rec.validation_errors = e;
  rec.flags.converged = any_converged && grid.vanilla_converged;
  return rec;
}

}  // namespace detail

// validation against the K neighbors' retrospective states
inline EstimateRecord rcse_select(const GridCandidates& grid, const HistoryWindow& window) {
  return detail::select_candidate(grid, Method::Rcse, [&](const StateVector& x) {
    double e = 0.0;
    for (int pos : grid.neighbors.positions)
      e += state_distance2(x, window.samples[pos].x_retro);
    return e / grid.neighbors.positions.size();
  });
}

// oracle variant: validated against the test instance's own retrospective
// state, which is unavailable in any real deployment
inline EstimateRecord anticipative_select(const GridCandidates& grid,
                                          const StateVector& x_retro_t) {
  EstimateRecord rec = detail::select_candidate(
      grid, Method::Anticipative,
      [&](const StateVector& x) { return state_distance2(x, x_retro_t); });
  rec.flags.not_implementable = true;
  return rec;
}

inline EstimateRecord rcse_estimate(const SystemModel& model, const HistoryWindow& window,
                                    const Eigen::VectorXd& z_a_t, int k, int cardinality) {
  return rcse_select(solve_rho_grid(model, window, z_a_t, k, cardinality), window);
}

inline EstimateRecord anticipative_estimate(const SystemModel& model,
                                            const HistoryWindow& window,
                                            const Eigen::VectorXd& z_a_t, int k, int cardinality,
                                            const StateVector& x_retro_t) {
  return anticipative_select(solve_rho_grid(model, window, z_a_t, k, cardinality), x_retro_t);
}

// closest neighbor's retrospective state; no optimization involved
inline StateVector persistent_estimate(const HistoryWindow& window, const Eigen::VectorXd& z_a_t,
                                       const Eigen::VectorXd& weights) {
  if (window.size() == 0) throw std::invalid_argument("persistent_estimate: empty window");
  const NeighborSet nn = knn_select(window, z_a_t, 1, weights);
  return window.samples[nn.positions[0]].x_retro;
}

}  // namespace rcse
