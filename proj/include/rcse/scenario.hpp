#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rcse/case_io.hpp"
#include "rcse/estimators.hpp"
#include "rcse/measurement.hpp"
#include "rcse/measurement_model.hpp"
#include "rcse/powerflow.hpp"
#include "rcse/random.hpp"

namespace rcse {

struct ScenarioConfig {
  std::string case_name = "ieee33";  // resolved against the cases dir, or a path
  double delta = 5.0;                // load participation variability, percent
  double pf_lo = 0.975;              // power-factor multipliers around nominal
  double pf_hi = 1.025;
  int pool_size = 2000;
  int test_size = 50;
  int window_size = 50;  // |S_t|
  int k_neighbors = 7;
  RedundancyLevel redundancy = RedundancyLevel::High;
  double sigma_pq = 0.01;
  double sigma_vtheta = 0.001;
  double scada_share_cap = 1.0;  // see PlanOptions
  int dark_regions = 1;          // see PlanOptions
  int grid_cardinality = 20;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (delta < 0.0) throw std::invalid_argument("scenario: delta must be >= 0");
    if (!(pf_lo <= pf_hi) || pf_lo <= 0.0)
      throw std::invalid_argument("scenario: bad power-factor range");
    if (test_size < 0 || pool_size <= test_size)
      throw std::invalid_argument("scenario: pool must exceed the test split");
    if (window_size < 1 || window_size > pool_size - test_size)
      throw std::invalid_argument("scenario: window size out of range");
    if (k_neighbors < 1 || k_neighbors > window_size)
      throw std::invalid_argument("scenario: K out of range");
    if (grid_cardinality < 2) throw std::invalid_argument("scenario: |C| must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"case", c.case_name},
                     {"delta", c.delta},
                     {"pf_range", {c.pf_lo, c.pf_hi}},
                     {"pool_size", c.pool_size},
                     {"test_size", c.test_size},
                     {"window_size", c.window_size},
                     {"k_neighbors", c.k_neighbors},
                     {"redundancy", to_string(c.redundancy)},
                     {"sigma_pq", c.sigma_pq},
                     {"sigma_vtheta", c.sigma_vtheta},
                     {"scada_share_cap", c.scada_share_cap},
                     {"dark_regions", c.dark_regions},
                     {"grid_cardinality", c.grid_cardinality},
                     {"master_seed", c.master_seed}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c.case_name = j.at("case").get<std::string>();
  c.delta = j.value("delta", 5.0);
  if (j.contains("pf_range")) {
    c.pf_lo = j["pf_range"][0].get<double>();
    c.pf_hi = j["pf_range"][1].get<double>();
  }
  c.pool_size = j.value("pool_size", 2000);
  c.test_size = j.value("test_size", 50);
  c.window_size = j.value("window_size", 50);
  c.k_neighbors = j.value("k_neighbors", 7);
  c.redundancy = redundancy_from_string(j.value("redundancy", std::string("high")));
  c.sigma_pq = j.value("sigma_pq", 0.01);
  c.sigma_vtheta = j.value("sigma_vtheta", 0.001);
  c.scada_share_cap = j.value("scada_share_cap", 1.0);
  c.dark_regions = j.value("dark_regions", 1);
  c.grid_cardinality = j.value("grid_cardinality", 20);
  c.master_seed = j.value("master_seed", std::uint64_t{1});
}

struct Instance {
  int instance_id = 0;
  StateVector x_true;
  Eigen::VectorXd z_a;
  Eigen::VectorXd z_d;
  Eigen::VectorXd load_p;  // per bus, p.u.
  Eigen::VectorXd load_q;
};

struct Dataset {
  ScenarioConfig config;
  NetworkCase net;
  AdmittanceMatrix ybus;
  MeasurementPlan plan;
  std::vector<Instance> instances;
  std::vector<std::optional<StateVector>> retro_states;  // filled lazily
  int divergence_retries = 0;

  SystemModel model() const { return {net, ybus, plan}; }

  // held-out instances: the trailing test_size ids (instances are exchangeable
  // by construction, so the suffix is as random as any subset)
  bool is_test(int instance_id) const {
    return instance_id >= config.pool_size - config.test_size;
  }
};

// One stochastic load profile: participation factors perturbed within
// +-delta% and renormalized so total active demand is preserved exactly;
// reactive power set from a power factor drawn around nominal and clamped
// at unity.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> perturb_loads(const NetworkCase& net,
                                                                 double delta, double pf_lo,
                                                                 double pf_hi, Rng& rng) {
  const int n = net.bus_count();
  Eigen::VectorXd p(n), q(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += net.buses[i].load_p;
  if (total == 0.0) throw std::invalid_argument("perturb_loads: case has no active demand");

  const double span = delta / 100.0;
  Eigen::VectorXd share = Eigen::VectorXd::Zero(n);
  double share_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double base_p = net.buses[i].load_p;
    if (base_p == 0.0) continue;
    share[i] = (base_p / total) * rng.uniform(1.0 - span, 1.0 + span);
    share_sum += share[i];
  }
  for (int i = 0; i < n; ++i) {
    const double base_p = net.buses[i].load_p;
    const double base_q = net.buses[i].load_q;
    if (base_p == 0.0) {
      p[i] = 0.0;
      q[i] = base_q;  // nothing to scale against
      continue;
    }
    p[i] = share[i] / share_sum * total;
    const double s0 = std::hypot(base_p, base_q);
    const double pf_nominal = base_p / s0;
    const double pf = std::min(1.0, pf_nominal * rng.uniform(pf_lo, pf_hi));
    const double sign = base_q < 0.0 ? -1.0 : 1.0;
    q[i] = sign * p[i] * std::tan(std::acos(pf));
  }
  return {p, q};
}

namespace detail {

inline InjectionSpec injections_for(const NetworkCase& net, const Eigen::VectorXd& load_p,
                                    const Eigen::VectorXd& load_q) {
  InjectionSpec spec;
  spec.p = -load_p;
  spec.q = -load_q;
  for (const auto& g : net.generators) spec.p[g.bus] += g.p_set;
  return spec;
}

}  // namespace detail

// Deterministic dataset synthesis: per-instance counter-derived sub-seeds, so
// generation parallelizes without changing a single byte of the result.
// Non-converging draws are resampled with a per-instance retry counter; the
// run aborts if more than 1% of the pool needed resampling.
inline Dataset generate_dataset(const NetworkCase& net, const ScenarioConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.net = net;
  ds.ybus = build_admittance(net);
  PlanOptions popts;
  popts.sigma_power = config.sigma_pq;
  popts.sigma_voltage = config.sigma_vtheta;
  popts.scada_share_cap = config.scada_share_cap;
  popts.dark_regions = config.dark_regions;
  ds.plan = plan_measurements(net, config.redundancy, mix_seed(config.master_seed, 0x706c616e),
                              popts);
  ds.instances.resize(config.pool_size);
  ds.retro_states.assign(config.pool_size, std::nullopt);

  const SystemModel model = ds.model();
  const StateVector start = flat_start(net);
  int retries = 0;

  for (int i = 0; i < config.pool_size; ++i) {
    Instance inst;
    inst.instance_id = i;
    bool done = false;
    for (int attempt = 0; attempt < 40 && !done; ++attempt) {
      Rng rng(mix_seed(mix_seed(config.master_seed, static_cast<std::uint64_t>(i)),
                       1000 + attempt));
      auto [p, q] = perturb_loads(net, config.delta, config.pf_lo, config.pf_hi, rng);
      const auto sol = solve_powerflow(net, ds.ybus, detail::injections_for(net, p, q), start);
      if (!sol.converged) {
        ++retries;
        continue;
      }
      inst.x_true = sol.state;
      inst.load_p = p;
      inst.load_q = q;
      Eigen::VectorXd z = eval_measurement_fn(sol.state, model, Subset::All).values;
      for (int c = 0; c < z.size(); ++c) z[c] += rng.normal(0.0, ds.plan.sigma[c]);
      inst.z_a.resize(ds.plan.available_count());
      for (int c = 0; c < ds.plan.available_count(); ++c)
        inst.z_a[c] = z[ds.plan.available_idx[c]];
      inst.z_d.resize(ds.plan.delayed_count());
      for (int c = 0; c < ds.plan.delayed_count(); ++c)
        inst.z_d[c] = z[ds.plan.delayed_idx[c]];
      done = true;
    }
    if (!done)
      throw std::runtime_error("generate_dataset: instance " + std::to_string(i) +
                               " kept diverging");
    ds.instances[i] = std::move(inst);
  }
  ds.divergence_retries = retries;
  if (retries > config.pool_size / 100)
    throw std::runtime_error("generate_dataset: more than 1% of instances diverged (" +
                             std::to_string(retries) + " retries)");
  return ds;
}

// retrospective state of one instance, cached on the dataset
inline const StateVector& retro_state(Dataset& ds, int instance_id) {
  auto& slot = ds.retro_states[instance_id];
  if (!slot.has_value()) {
    const auto& inst = ds.instances[instance_id];
    auto [x, rep] = wls_estimate(ds.model(), inst.z_a, inst.z_d);
    slot = std::move(x);
  }
  return *slot;
}

// ids of the window_size nearest non-test instances, ascending distance with
// ties broken by instance id
inline std::vector<int> window_member_ids(const Dataset& ds, int test_instance_id,
                                          int window_size) {
  const Eigen::VectorXd w_a = ds.plan.weights_for(Subset::Available);
  const Eigen::VectorXd& z_a_t = ds.instances[test_instance_id].z_a;
  struct Entry {
    double dist;
    int id;
  };
  std::vector<Entry> entries;
  for (const auto& inst : ds.instances) {
    if (ds.is_test(inst.instance_id)) continue;
    entries.push_back(
        {(w_a.array() * (z_a_t - inst.z_a).array()).matrix().squaredNorm(), inst.instance_id});
  }
  if (static_cast<int>(entries.size()) < window_size)
    throw std::invalid_argument("build_history: pool smaller than the window");
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.id < b.id;
  });
  std::vector<int> ids(window_size);
  for (int i = 0; i < window_size; ++i) ids[i] = entries[i].id;
  return ids;
}

// Training window of a test instance: its window_size nearest neighbors from
// the non-test pool, each carrying the retrospective state computed from the
// full measurement set.
inline HistoryWindow build_history(Dataset& ds, int test_instance_id, int window_size) {
  const auto ids = window_member_ids(ds, test_instance_id, window_size);
  HistoryWindow window;
  window.plan_id = ds.plan.id;
  for (int id : ids) {
    HistorySample s;
    s.sample_id = id;
    s.z_a = ds.instances[id].z_a;
    s.z_d = ds.instances[id].z_d;
    s.x_retro = retro_state(ds, id);
    window.samples.push_back(std::move(s));
  }
  return window;
}

// ---------------------------------------------------------------------------
// dataset file format: JSON lines; one header record (config and plan), then
// one record per instance, full-precision floats
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

inline nlohmann::json state_to_json(const StateVector& s) {
  return {{"v_mag", vec_to_json(s.v_mag)}, {"v_ang", vec_to_json(s.v_ang)},
          {"slack", s.slack_bus}};
}

inline StateVector state_from_json(const nlohmann::json& j) {
  StateVector s;
  s.v_mag = vec_from_json(j.at("v_mag"));
  s.v_ang = vec_from_json(j.at("v_ang"));
  s.slack_bus = j.at("slack").get<int>();
  return s;
}

inline const char* channel_kind_name(ChannelKind k) {
  switch (k) {
    case ChannelKind::VMag: return "v_mag";
    case ChannelKind::VAngle: return "v_angle";
    case ChannelKind::PInjection: return "p_injection";
    case ChannelKind::QInjection: return "q_injection";
    case ChannelKind::PFlow: return "p_flow";
    default: return "q_flow";
  }
}

inline ChannelKind channel_kind_from(const std::string& s) {
  if (s == "v_mag") return ChannelKind::VMag;
  if (s == "v_angle") return ChannelKind::VAngle;
  if (s == "p_injection") return ChannelKind::PInjection;
  if (s == "q_injection") return ChannelKind::QInjection;
  if (s == "p_flow") return ChannelKind::PFlow;
  if (s == "q_flow") return ChannelKind::QFlow;
  throw std::invalid_argument("unknown channel kind '" + s + "'");
}

inline const char* channel_source_name(ChannelSource s) {
  switch (s) {
    case ChannelSource::Pmu: return "pmu";
    case ChannelSource::Scada: return "scada";
    default: return "smart_meter";
  }
}

inline ChannelSource channel_source_from(const std::string& s) {
  if (s == "pmu") return ChannelSource::Pmu;
  if (s == "scada") return ChannelSource::Scada;
  if (s == "smart_meter") return ChannelSource::SmartMeter;
  throw std::invalid_argument("unknown channel source '" + s + "'");
}

}  // namespace detail

// bus/branch references in plan records are internal 0-based indices of the
// generating case
inline void to_json(nlohmann::json& j, const MeasurementPlan& plan) {
  nlohmann::json channels = nlohmann::json::array();
  for (const auto& ch : plan.channels)
    channels.push_back({{"kind", detail::channel_kind_name(ch.kind)},
                        {"source", detail::channel_source_name(ch.source)},
                        {"bus", ch.bus},
                        {"branch", ch.branch},
                        {"end", ch.end == BranchEnd::From ? "from" : "to"}});
  j = nlohmann::json{{"id", plan.id},
                     {"level", to_string(plan.level)},
                     {"channels", channels},
                     {"available_idx", plan.available_idx},
                     {"delayed_idx", plan.delayed_idx},
                     {"sigma", detail::vec_to_json(plan.sigma)},
                     {"zero_injection_buses", plan.zero_injection_buses},
                     {"dark_buses", plan.dark_buses}};
}

inline void from_json(const nlohmann::json& j, MeasurementPlan& plan) {
  plan.id = j.at("id").get<std::string>();
  plan.level = redundancy_from_string(j.at("level").get<std::string>());
  plan.channels.clear();
  for (const auto& jc : j.at("channels")) {
    MeasurementChannel ch;
    ch.kind = detail::channel_kind_from(jc.at("kind").get<std::string>());
    ch.source = detail::channel_source_from(jc.at("source").get<std::string>());
    ch.bus = jc.at("bus").get<int>();
    ch.branch = jc.at("branch").get<int>();
    ch.end = jc.at("end").get<std::string>() == "from" ? BranchEnd::From : BranchEnd::To;
    plan.channels.push_back(ch);
  }
  plan.available_idx = j.at("available_idx").get<std::vector<int>>();
  plan.delayed_idx = j.at("delayed_idx").get<std::vector<int>>();
  plan.sigma = detail::vec_from_json(j.at("sigma"));
  plan.weight = plan.sigma.cwiseInverse();
  plan.zero_injection_buses = j.at("zero_injection_buses").get<std::vector<int>>();
  plan.dark_buses = j.value("dark_buses", std::vector<int>{});
}

inline void save_dataset(const Dataset& ds, std::ostream& out) {
  nlohmann::json header;
  header["type"] = "header";
  header["config"] = ds.config;
  header["plan"] = ds.plan;
  out << header.dump() << "\n";
  for (const auto& inst : ds.instances) {
    nlohmann::json j;
    j["type"] = "instance";
    j["instance_id"] = inst.instance_id;
    j["x_true"] = detail::state_to_json(inst.x_true);
    j["z_a"] = detail::vec_to_json(inst.z_a);
    j["z_d"] = detail::vec_to_json(inst.z_d);
    j["load_p"] = detail::vec_to_json(inst.load_p);
    j["load_q"] = detail::vec_to_json(inst.load_q);
    if (ds.retro_states[inst.instance_id].has_value())
      j["retro_state"] = detail::state_to_json(*ds.retro_states[inst.instance_id]);
    out << j.dump() << "\n";
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // "\n" line ends on every platform
  if (!out) throw std::runtime_error("cannot write dataset file '" + path + "'");
  save_dataset(ds, out);
}

inline Dataset load_dataset(std::istream& in, const NetworkCase& net) {
  Dataset ds;
  ds.net = net;
  ds.ybus = build_admittance(net);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "header") {
      ds.config = j.at("config").get<ScenarioConfig>();
      ds.plan = j.at("plan").get<MeasurementPlan>();
      ds.instances.resize(ds.config.pool_size);
      ds.retro_states.assign(ds.config.pool_size, std::nullopt);
      have_header = true;
    } else if (type == "instance") {
      if (!have_header) throw std::runtime_error("dataset: instance before header");
      Instance inst;
      inst.instance_id = j.at("instance_id").get<int>();
      inst.x_true = detail::state_from_json(j.at("x_true"));
      inst.z_a = detail::vec_from_json(j.at("z_a"));
      inst.z_d = detail::vec_from_json(j.at("z_d"));
      inst.load_p = detail::vec_from_json(j.at("load_p"));
      inst.load_q = detail::vec_from_json(j.at("load_q"));
      const int id = inst.instance_id;
      ds.instances[id] = std::move(inst);
      if (j.contains("retro_state"))
        ds.retro_states[id] = detail::state_from_json(j.at("retro_state"));
    }
  }
  if (!have_header) throw std::runtime_error("dataset: missing header record");
  return ds;
}

inline Dataset load_dataset(const std::string& path, const NetworkCase& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  return load_dataset(in, net);
}

}  // namespace rcse
