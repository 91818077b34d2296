// rcse: benchmark and estimation CLI
//
//   rcse gen      --config scenario.json --out dataset.jsonl
//   rcse estimate --dataset dataset.jsonl --instance N --method rcse
//   rcse bench    --config experiment.json|manifest.json --out dir --jobs N
//   rcse verify
//
// exit codes: 0 success, 1 configuration error, 2 cell failures present

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rcse/bench.hpp"
#include "rcse/case_io.hpp"
#include "rcse/estimators.hpp"
#include "rcse/random.hpp"
#include "rcse/scenario.hpp"
#include "rcse/simplex.hpp"

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return j;
}

int cmd_gen(const std::string& config_path, const std::string& out_path,
            const std::string& cases_dir, std::optional<std::uint64_t> seed) {
  rcse::ScenarioConfig config = read_json_file(config_path).get<rcse::ScenarioConfig>();
  if (seed) config.master_seed = *seed;
  const rcse::NetworkCase net = rcse::resolve_case(config.case_name, cases_dir);
  const rcse::Dataset ds = rcse::generate_dataset(net, config);
  rcse::save_dataset(ds, out_path);
  std::cout << "wrote " << ds.instances.size() << " instances to " << out_path;
  if (ds.divergence_retries) std::cout << " (" << ds.divergence_retries << " retries)";
  std::cout << "\n";
  return 0;
}

int cmd_estimate(const std::string& dataset_path, int instance_id, const std::string& method_name,
                 const std::string& cases_dir, std::optional<int> k_override,
                 std::optional<int> window_override) {
  // the dataset header carries the scenario config; the case resolves by name
  std::ifstream peek(dataset_path);
  if (!peek) throw std::runtime_error("cannot open dataset '" + dataset_path + "'");
  std::string first_line;
  std::getline(peek, first_line);
  const auto header = nlohmann::json::parse(first_line);
  const auto config = header.at("config").get<rcse::ScenarioConfig>();
  const rcse::NetworkCase net = rcse::resolve_case(config.case_name, cases_dir);
  rcse::Dataset ds = rcse::load_dataset(dataset_path, net);

  if (instance_id < 0) instance_id = config.pool_size - config.test_size;  // first held-out
  if (instance_id >= config.pool_size)
    throw std::invalid_argument("instance id out of range");
  const int k = k_override.value_or(config.k_neighbors);
  const int window_size = window_override.value_or(config.window_size);
  const rcse::Method method = rcse::method_from_string(method_name);

  rcse::HistoryWindow window = rcse::build_history(ds, instance_id, window_size);
  const rcse::Instance& inst = ds.instances[instance_id];
  const rcse::SystemModel model = ds.model();

  rcse::EstimateRecord rec;
  switch (method) {
    case rcse::Method::Retrospective: {
      rec.method = method;
      rec.x_hat = rcse::retro_state(ds, instance_id);
      break;
    }
    case rcse::Method::Persistent: {
      rec.method = method;
      rec.x_hat = rcse::persistent_estimate(window, inst.z_a,
                                            ds.plan.weights_for(rcse::Subset::Available));
      break;
    }
    case rcse::Method::Vanilla: {
      rec.method = method;
      rcse::WlsReport rep;
      auto [x, nb] = rcse::vanilla_estimate(model, window, inst.z_a, k, &rep);
      rec.x_hat = std::move(x);
      rec.flags.converged = rep.converged;
      break;
    }
    case rcse::Method::Rcse:
      rec = rcse::rcse_estimate(model, window, inst.z_a, k, config.grid_cardinality);
      break;
    case rcse::Method::Anticipative:
      rec = rcse::anticipative_estimate(model, window, inst.z_a, k, config.grid_cardinality,
                                        rcse::retro_state(ds, instance_id));
      break;
  }
  nlohmann::json out = rcse::estimate_record_to_json(rec);
  out["instance_id"] = instance_id;
  out["k"] = k;
  out["window_size"] = window_size;
  std::cout << out.dump(1) << "\n";
  return 0;
}

int cmd_bench(const std::string& config_path, std::optional<std::string> out_dir,
              std::optional<std::string> cases_dir, std::optional<int> jobs,
              std::optional<std::uint64_t> seed) {
  nlohmann::json j = read_json_file(config_path);
  if (j.contains("experiment")) j = j.at("experiment");  // accept a manifest
  rcse::ExperimentSpec spec = j.get<rcse::ExperimentSpec>();
  if (out_dir) spec.out_dir = *out_dir;
  if (cases_dir) spec.cases_dir = *cases_dir;
  if (jobs) spec.jobs = *jobs;
  if (seed)
    for (auto& cell : spec.cells) cell.master_seed = *seed;

  const rcse::ExperimentResult result = rcse::run_experiment(spec);
  rcse::write_experiment_files(result, spec.out_dir);
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    const auto& cell = result.cells[c];
    if (cell.failed) {
      std::cout << "cell " << c << " FAILED: " << cell.error << "\n";
      continue;
    }
    for (const auto& row : cell.rows)
      std::cout << "cell " << c << " " << row.network << " " << row.redundancy << " "
                << row.method << ": rmse_x=" << rcse::format_double(row.rmse_x)
                << " rmse_s=" << rcse::format_double(row.rmse_s)
                << (row.nonconverged ? " nonconverged=" + std::to_string(row.nonconverged) : "")
                << "\n";
  }
  std::cout << "results under " << spec.out_dir << "\n";
  return result.cells_failed > 0 ? 2 : 0;
}

// ---------------------------------------------------------------------------
// verify: fast self-contained invariant checks on the shipped cases
// ---------------------------------------------------------------------------

struct VerifyReport {
  int passed = 0;
  int failed = 0;
  void record(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    ok ? ++passed : ++failed;
  }
};

int cmd_verify(const std::string& cases_dir) {
  using namespace rcse;
  VerifyReport report;
  const char* names[] = {"ieee33", "ieee39"};
  const RedundancyLevel levels[] = {RedundancyLevel::Lowest, RedundancyLevel::Low,
                                    RedundancyLevel::High, RedundancyLevel::Highest};

  for (const char* name : names) {
    const NetworkCase net = resolve_case(name, cases_dir);
    const AdmittanceMatrix ybus = build_admittance(net);

    // dense element-by-element reassembly
    Eigen::MatrixXcd dense = Eigen::MatrixXcd::Zero(net.bus_count(), net.bus_count());
    for (const auto& br : net.branches) {
      if (!br.in_service) continue;
      const Complex ys = 1.0 / Complex(br.r, br.x);
      const Complex ysh(0.0, br.b_charging / 2.0);
      const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
      dense(br.from_bus, br.from_bus) += (ys + ysh) / std::norm(tap);
      dense(br.from_bus, br.to_bus) += -ys / std::conj(tap);
      dense(br.to_bus, br.from_bus) += -ys / tap;
      dense(br.to_bus, br.to_bus) += ys + ysh;
    }
    for (int i = 0; i < net.bus_count(); ++i)
      dense(i, i) += Complex(net.buses[i].shunt_g, net.buses[i].shunt_b);
    const double ybus_err = (Eigen::MatrixXcd(ybus.y) - dense).cwiseAbs().maxCoeff();
    report.record(std::string(name) + ": admittance matches dense assembly", ybus_err < 1e-12,
                  "max err " + format_double(ybus_err));

    // analytic jacobian vs central differences on random states
    const MeasurementPlan plan = plan_measurements(net, RedundancyLevel::Highest, 1);
    const SystemModel model{net, ybus, plan};
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      StateVector s = StateVector::flat(net.bus_count(), net.slack_index());
      for (int i = 0; i < net.bus_count(); ++i) {
        s.v_mag[i] = rng.uniform(0.95, 1.05);
        if (i != s.slack_bus) s.v_ang[i] = rng.uniform(-0.3, 0.3);
      }
      const Eigen::MatrixXd h = measurement_jacobian(s, model, Subset::All);
      const Eigen::VectorXd x0 = s.to_free();
      for (int j = 0; j < x0.size(); ++j) {
        Eigen::VectorXd xp = x0, xm = x0;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        const auto fp = eval_measurement_fn(
            StateVector::from_free(xp, net.bus_count(), s.slack_bus), model, Subset::All);
        const auto fm = eval_measurement_fn(
            StateVector::from_free(xm, net.bus_count(), s.slack_bus), model, Subset::All);
        const Eigen::VectorXd fd = (fp.values - fm.values) / 2e-6;
        for (int r = 0; r < h.rows(); ++r) {
          const double scale = std::max(1.0, std::abs(h(r, j)));
          worst = std::max(worst, std::abs(h(r, j) - fd[r]) / scale);
        }
      }
    }
    report.record(std::string(name) + ": jacobian matches finite differences", worst < 1e-5,
                  "max rel err " + format_double(worst));

    // plan partition and redundancy over a seed sweep
    bool plans_ok = true;
    for (auto level : levels) {
      for (std::uint64_t seed = 0; seed < 20 && plans_ok; ++seed) {
        const auto p = plan_measurements(net, level, seed);
        if (p.available_count() + p.delayed_count() != p.channel_count()) plans_ok = false;
        const double r = static_cast<double>(p.available_count()) / net.state_dimension();
        if (std::abs(r - redundancy_target(level)) > 0.05) plans_ok = false;
      }
    }
    report.record(std::string(name) + ": plans partition and hit redundancy targets", plans_ok);

    // power flow self-consistency at base load
    InjectionSpec spec;
    spec.p.setZero(net.bus_count());
    spec.q.setZero(net.bus_count());
    for (int i = 0; i < net.bus_count(); ++i) {
      spec.p[i] = -net.buses[i].load_p;
      spec.q[i] = -net.buses[i].load_q;
    }
    for (const auto& g : net.generators) spec.p[g.bus] += g.p_set;
    const auto sol = solve_powerflow(net, ybus, spec, flat_start(net));
    report.record(std::string(name) + ": power flow converges and is self-consistent",
                  sol.converged && sol.max_mismatch < 1e-8,
                  std::to_string(sol.iterations) + " iterations");
  }

  // lp duality and complementary slackness on random problems
  {
    Rng rng(7);
    bool ok = true;
    double worst_gap = 0.0;
    for (int trial = 0; trial < 200 && ok; ++trial) {
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
        lp.b_ub[i] = rng.uniform(0.05, 1.5);
      }
      lp.a_ub.row(m).setOnes();
      lp.b_ub[m] = rng.uniform(1.0, 4.0);
      const auto sol = solve_small_lp(lp);
      if (sol.status != LpStatus::Optimal) continue;
      const double gap = std::abs(sol.objective - sol.dual_objective);
      worst_gap = std::max(worst_gap, gap / (1.0 + std::abs(sol.objective)));
      if (gap > 1e-9 * (1.0 + std::abs(sol.objective))) ok = false;
      for (int i = 0; i < lp.ub_rows(); ++i) {
        const double slack = lp.b_ub[i] - lp.a_ub.row(i).dot(sol.x);
        if (std::abs(sol.dual_ub[i] * slack) > 1e-8 * (1.0 + std::abs(sol.objective))) ok = false;
      }
    }
    report.record("lp: strong duality and complementary slackness", ok,
                  "worst rel gap " + format_double(worst_gap));
  }

  // measurement noise calibration on a small synthetic pool
  {
    ScenarioConfig config;
    config.case_name = "ieee33";
    config.pf_lo = 0.9;
    config.pf_hi = 1.1;
    config.pool_size = 250;
    config.test_size = 5;
    config.window_size = 20;
    config.k_neighbors = 4;
    config.master_seed = 3;
    const NetworkCase net = resolve_case(config.case_name, cases_dir);
    const Dataset ds = generate_dataset(net, config);
    const SystemModel model = ds.model();
    double acc = 0.0;
    long count = 0;
    for (const auto& inst : ds.instances) {
      const auto z = eval_measurement_fn(inst.x_true, model, Subset::All).values;
      for (int c = 0; c < ds.plan.delayed_count(); ++c) {
        const double e = inst.z_d[c] - z[ds.plan.delayed_idx[c]];
        acc += e * e;
        ++count;
      }
    }
    const double sigma = std::sqrt(acc / count);
    report.record("scenario: measurement noise calibrated",
                  sigma > 0.0095 && sigma < 0.0105,
                  "empirical sigma " + format_double(sigma) + " over " +
                      std::to_string(count) + " draws");
  }

  std::cout << report.passed << " passed, " << report.failed << " failed\n";
  return report.failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust contextual state estimation benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_path = "dataset.jsonl", cases_dir = "cases";
  std::string dataset_path, method_name = "rcse";
  int instance_id = -1;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, k_override, window_override;
  std::optional<std::string> out_dir, bench_cases;

  auto* gen = app.add_subcommand("gen", "synthesize a dataset");
  gen->add_option("--config", config_path, "scenario config JSON")->required();
  gen->add_option("--out", out_path, "output dataset path");
  gen->add_option("--cases-dir", cases_dir, "directory with case files");
  gen->add_option("--seed", seed, "override the master seed");

  auto* est = app.add_subcommand("estimate", "run one estimator on one instance");
  est->add_option("--dataset", dataset_path, "dataset JSONL file")->required();
  est->add_option("--instance", instance_id, "instance id (default: first held-out)");
  est->add_option("--method", method_name,
                  "retrospective|vanilla|rcse|persistent|anticipative");
  est->add_option("--k", k_override, "neighbor count override");
  est->add_option("--window", window_override, "window size override");
  est->add_option("--cases-dir", cases_dir, "directory with case files");

  auto* bench = app.add_subcommand("bench", "run a full experiment grid");
  bench->add_option("--config", config_path, "experiment spec or manifest JSON")->required();
  bench->add_option("--out", out_dir, "output directory");
  bench->add_option("--jobs", jobs, "worker threads");
  bench->add_option("--cases-dir", bench_cases, "directory with case files");
  bench->add_option("--seed", seed, "override every cell's master seed");

  auto* verify = app.add_subcommand("verify", "run the invariant checks");
  verify->add_option("--cases-dir", cases_dir, "directory with case files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_path, cases_dir, seed);
    if (est->parsed())
      return cmd_estimate(dataset_path, instance_id, method_name, cases_dir, k_override,
                          window_override);
    if (bench->parsed()) return cmd_bench(config_path, out_dir, bench_cases, jobs, seed);
    if (verify->parsed()) return cmd_verify(cases_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
