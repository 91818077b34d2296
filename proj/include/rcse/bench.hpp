#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcse/estimators.hpp"
#include "rcse/parallel.hpp"
#include "rcse/scenario.hpp"

namespace rcse {

struct ExperimentSpec {
  std::vector<ScenarioConfig> cells;
  std::vector<Method> estimators = {Method::Retrospective, Method::Vanilla, Method::Rcse,
                                    Method::Persistent, Method::Anticipative};
  std::string out_dir = "bench-out";
  std::string cases_dir = "cases";
  int jobs = 1;

  void validate() const {
    if (cells.empty()) throw std::invalid_argument("experiment: no cells");
    if (estimators.empty()) throw std::invalid_argument("experiment: no estimators");
    for (const auto& c : cells) c.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& spec) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : spec.cells) cells.push_back(c);
  nlohmann::json est = nlohmann::json::array();
  for (Method m : spec.estimators) est.push_back(to_string(m));
  j = nlohmann::json{{"cells", cells},
                     {"estimators", est},
                     {"out_dir", spec.out_dir},
                     {"cases_dir", spec.cases_dir},
                     {"jobs", spec.jobs}};
}

inline void from_json(const nlohmann::json& j, ExperimentSpec& spec) {
  spec.cells.clear();
  for (const auto& jc : j.at("cells")) spec.cells.push_back(jc.get<ScenarioConfig>());
  spec.estimators.clear();
  for (const auto& je : j.value("estimators", nlohmann::json::array()))
    spec.estimators.push_back(method_from_string(je.get<std::string>()));
  if (spec.estimators.empty())
    spec.estimators = {Method::Retrospective, Method::Vanilla, Method::Rcse, Method::Persistent,
                       Method::Anticipative};
  spec.out_dir = j.value("out_dir", std::string("bench-out"));
  spec.cases_dir = j.value("cases_dir", std::string("cases"));
  spec.jobs = j.value("jobs", 1);
}

struct ResultRow {
  std::string network;
  double delta = 0.0;
  int window_size = 0;
  int k = 0;
  std::string redundancy;
  std::string method;
  double rmse_x = 0.0;
  double rmse_s = 0.0;
  int nonconverged = 0;
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

inline double rmse_state(const std::vector<StateVector>& estimates,
                         const std::vector<StateVector>& truths) {
  if (estimates.empty() || estimates.size() != truths.size())
    throw std::invalid_argument("rmse_state: empty or mismatched test set");
  double acc = 0.0;
  for (std::size_t t = 0; t < estimates.size(); ++t)
    acc += state_distance2(estimates[t], truths[t]);
  return std::sqrt(acc / estimates.size());
}

// apparent power injections and branch-end apparent flows, concatenated
inline Eigen::VectorXd apparent_power_vector(const StateVector& s, const NetworkCase& net,
                                             const AdmittanceMatrix& ybus) {
  Eigen::VectorXd p, q;
  eval_injections(s, ybus, p, q);
  const BranchFlows f = eval_flows(s, net, ybus);
  const int n = net.bus_count(), nb = net.branch_count();
  Eigen::VectorXd out(n + 2 * nb);
  for (int i = 0; i < n; ++i) out[i] = std::hypot(p[i], q[i]);
  for (int k = 0; k < nb; ++k) {
    out[n + 2 * k] = std::hypot(f.p_from[k], f.q_from[k]);
    out[n + 2 * k + 1] = std::hypot(f.p_to[k], f.q_to[k]);
  }
  return out;
}

inline double rmse_apparent_power(const std::vector<StateVector>& estimates,
                                  const std::vector<StateVector>& truths,
                                  const NetworkCase& net, const AdmittanceMatrix& ybus) {
  if (estimates.empty() || estimates.size() != truths.size())
    throw std::invalid_argument("rmse_apparent_power: empty or mismatched test set");
  double acc = 0.0;
  for (std::size_t t = 0; t < estimates.size(); ++t)
    acc += (apparent_power_vector(estimates[t], net, ybus) -
            apparent_power_vector(truths[t], net, ybus))
               .squaredNorm();
  return std::sqrt(acc / estimates.size());
}

// ---------------------------------------------------------------------------
// serialization helpers
// ---------------------------------------------------------------------------

// shortest round-trip decimal form, locale-free; keeps reruns byte-identical
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline nlohmann::json estimate_record_to_json(const EstimateRecord& rec) {
  nlohmann::json j;
  j["method"] = to_string(rec.method);
  j["x_hat"] = detail::state_to_json(rec.x_hat);
  if (rec.rho_selected.has_value()) j["rho_selected"] = *rec.rho_selected;
  if (rec.validation_errors.has_value())
    j["validation_errors"] = detail::vec_to_json(*rec.validation_errors);
  j["flags"] = {{"converged", rec.flags.converged},
                {"nonconverged_candidates", rec.flags.nonconverged_candidates},
                {"degenerate_grid", rec.flags.degenerate_grid},
                {"not_implementable", rec.flags.not_implementable}};
  return j;
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct CellOutcome {
  ScenarioConfig config;
  std::vector<ResultRow> rows;
  std::map<std::string, double> mean_solve_seconds;  // per method (wall clock)
  bool failed = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<CellOutcome> cells;
  int cells_failed = 0;
  std::string results_csv;
  std::string plot_csv;
  std::string timings_csv;
  nlohmann::json manifest;
};

inline NetworkCase resolve_case(const std::string& name, const std::string& cases_dir) {
  namespace fs = std::filesystem;
  fs::path p(name);
  if (!fs::exists(p)) {
    p = fs::path(cases_dir) / (name + ".json");
    if (!fs::exists(p)) p = fs::path(cases_dir) / name;
  }
  if (!fs::exists(p))
    throw CaseError("cannot resolve case '" + name + "' under '" + cases_dir + "'");
  return load_case_file(p.string());
}

namespace detail {

struct InstanceEstimates {
  std::map<std::string, StateVector> x_hat;
  std::map<std::string, double> seconds;
  std::map<std::string, bool> converged;
  std::string error;
};

inline bool wants(const std::vector<Method>& set, Method m) {
  return std::find(set.begin(), set.end(), m) != set.end();
}

}  // namespace detail

// Runs one scenario cell: synthesizes the dataset, builds per-test-instance
// history windows, runs the requested estimators and aggregates the metrics.
// Work is parallel over instances with counter-derived seeds and slot writes,
// so the outcome is independent of the degree of parallelism.
inline CellOutcome run_cell(const ScenarioConfig& config, const std::vector<Method>& estimators,
                            const std::string& cases_dir, int jobs) {
  CellOutcome out;
  out.config = config;
  try {
    const NetworkCase net = resolve_case(config.case_name, cases_dir);
    Dataset ds = generate_dataset(net, config);
    const int n_test = config.test_size;
    const int first_test = config.pool_size - n_test;

    // everything retrospective is precomputed up front so the parallel phase
    // only reads the dataset
    std::vector<std::vector<int>> member_ids(n_test);
    for (int t = 0; t < n_test; ++t)
      member_ids[t] = window_member_ids(ds, first_test + t, config.window_size);
    std::vector<int> retro_ids;
    for (const auto& ids : member_ids) retro_ids.insert(retro_ids.end(), ids.begin(), ids.end());
    const bool needs_test_retro = detail::wants(estimators, Method::Retrospective) ||
                                  detail::wants(estimators, Method::Anticipative);
    if (needs_test_retro)
      for (int t = 0; t < n_test; ++t) retro_ids.push_back(first_test + t);
    std::sort(retro_ids.begin(), retro_ids.end());
    retro_ids.erase(std::unique(retro_ids.begin(), retro_ids.end()), retro_ids.end());
    parallel_for(static_cast<int>(retro_ids.size()), jobs,
                 [&](int i) { retro_state(ds, retro_ids[i]); });

    std::vector<detail::InstanceEstimates> slots(n_test);
    const Dataset& cds = ds;
    parallel_for(n_test, jobs, [&](int t) {
      auto& slot = slots[t];
      const int test_id = first_test + t;
      const Instance& inst = cds.instances[test_id];
      try {
        // window samples read the precomputed cache
        HistoryWindow window;
        window.plan_id = cds.plan.id;
        for (int id : member_ids[t]) {
          HistorySample s;
          s.sample_id = id;
          s.z_a = cds.instances[id].z_a;
          s.z_d = cds.instances[id].z_d;
          s.x_retro = *cds.retro_states[id];
          window.samples.push_back(std::move(s));
        }
        const SystemModel model = cds.model();
        using clock = std::chrono::steady_clock;
        auto timed = [&](const std::string& name, auto&& fn) {
          const auto t0 = clock::now();
          fn();
          slot.seconds[name] = std::chrono::duration<double>(clock::now() - t0).count();
        };

        if (detail::wants(estimators, Method::Retrospective))
          timed("retrospective", [&] {
            slot.x_hat["retrospective"] = *cds.retro_states[test_id];
            slot.converged["retrospective"] = true;
          });
        if (detail::wants(estimators, Method::Persistent))
          timed("persistent", [&] {
            slot.x_hat["persistent"] = persistent_estimate(
                window, inst.z_a, cds.plan.weights_for(Subset::Available));
            slot.converged["persistent"] = true;
          });
        if (detail::wants(estimators, Method::Vanilla))
          timed("vanilla", [&] {
            WlsReport rep;
            auto [xv, nb] =
                vanilla_estimate(model, window, inst.z_a, config.k_neighbors, &rep);
            slot.x_hat["vanilla"] = std::move(xv);
            slot.converged["vanilla"] = rep.converged;
          });
        const bool want_rcse = detail::wants(estimators, Method::Rcse);
        const bool want_antic = detail::wants(estimators, Method::Anticipative);
        if (want_rcse || want_antic) {
          // the tuned estimators share one grid of robust candidates
          GridCandidates grid;
          timed("rcse", [&] {
            grid = solve_rho_grid(model, window, inst.z_a, config.k_neighbors,
                                  config.grid_cardinality);
          });
          if (want_rcse) {
            const EstimateRecord rec = rcse_select(grid, window);
            slot.x_hat["rcse"] = rec.x_hat;
            slot.converged["rcse"] = rec.flags.converged;
          }
          if (want_antic) {
            const auto t0 = std::chrono::steady_clock::now();
            const EstimateRecord rec = anticipative_select(grid, *cds.retro_states[test_id]);
            slot.x_hat["anticipative"] = rec.x_hat;
            slot.converged["anticipative"] = rec.flags.converged;
            slot.seconds["anticipative"] =
                slot.seconds["rcse"] +
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          }
        }
      } catch (const std::exception& e) {
        slot.error = e.what();
      }
    });

    // deterministic reduction in instance order
    for (Method m : estimators) {
      const std::string name = to_string(m);
      std::vector<StateVector> est, truth;
      ResultRow row;
      row.network = net.name;
      row.delta = config.delta;
      row.window_size = config.window_size;
      row.k = config.k_neighbors;
      row.redundancy = to_string(config.redundancy);
      row.method = name;
      double seconds = 0.0;
      int timed_count = 0;
      for (int t = 0; t < n_test; ++t) {
        const auto& slot = slots[t];
        if (!slot.error.empty() || !slot.x_hat.count(name)) {
          ++row.nonconverged;
          continue;
        }
        if (!slot.converged.at(name)) ++row.nonconverged;
        est.push_back(slot.x_hat.at(name));
        truth.push_back(ds.instances[first_test + t].x_true);
        seconds += slot.seconds.at(name);
        ++timed_count;
      }
      if (est.empty()) {
        out.failed = true;
        out.error = "estimator " + name + " produced no estimates";
        continue;
      }
      row.rmse_x = rmse_state(est, truth);
      row.rmse_s = rmse_apparent_power(est, truth, net, ds.ybus);
      out.mean_solve_seconds[name] = timed_count ? seconds / timed_count : 0.0;
      out.rows.push_back(std::move(row));
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

inline std::uint64_t config_hash(const nlohmann::json& j) {
  // FNV-1a over the canonical dump
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult result;

  for (const auto& cell : spec.cells)
    result.cells.push_back(run_cell(cell, spec.estimators, spec.cases_dir, spec.jobs));

  const std::string crlf = "\r\n";
  std::string csv = "network,delta,window,k,redundancy,method,rmse_x,rmse_s,nonconverged" + crlf;
  std::string plot = "cell,method,rmse_x,rmse_s" + crlf;
  std::string timings = "cell,method,mean_solve_seconds" + crlf;
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    const auto& cell = result.cells[c];
    if (cell.failed) {
      ++result.cells_failed;
      continue;
    }
    for (const auto& row : cell.rows) {
      csv += row.network + "," + format_double(row.delta) + "," +
             std::to_string(row.window_size) + "," + std::to_string(row.k) + "," +
             row.redundancy + "," + row.method + "," + format_double(row.rmse_x) + "," +
             format_double(row.rmse_s) + "," + std::to_string(row.nonconverged) + crlf;
      plot += std::to_string(c) + "," + row.method + "," + format_double(row.rmse_x) + "," +
              format_double(row.rmse_s) + crlf;
    }
    for (const auto& [method, secs] : cell.mean_solve_seconds)
      timings += std::to_string(c) + "," + method + "," + format_double(secs) + crlf;
  }
  result.results_csv = csv;
  result.plot_csv = plot;
  result.timings_csv = timings;

  nlohmann::json spec_json = spec;
  result.manifest = {{"experiment", spec_json},
                     {"config_hash", config_hash(spec_json)},
                     {"artifact_version", "0.1.0"}};
  return result;
}

// writes results.csv, plot_rmse.csv, timings.csv and manifest.json; the
// timings file carries the only wall-clock content and is the one artifact
// that legitimately differs between reruns
inline void write_experiment_files(const ExperimentResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + name + " under " + out_dir);
    f << content;
  };
  write("results.csv", result.results_csv);
  write("plot_rmse.csv", result.plot_csv);
  write("timings.csv", result.timings_csv);
  write("manifest.json", result.manifest.dump(1) + "\n");
}

}  // namespace rcse
