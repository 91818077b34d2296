#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rcse {

// Raised for malformed or semantically invalid case data.
struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class BusKind { Slack, Pv, Pq };

struct BusRecord {
  int id = 0;  // external (1-based) id as written in the case file
  BusKind kind = BusKind::Pq;
  double load_p = 0.0;  // p.u. active demand
  double load_q = 0.0;  // p.u. reactive demand
  double shunt_g = 0.0;  // p.u. shunt conductance at V = 1
  double shunt_b = 0.0;  // p.u. shunt susceptance at V = 1
  double base_kv = 0.0;
};

enum class BranchEnd { From, To };

// Branch endpoints hold internal 0-based bus indices after validation.
struct BranchRecord {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;  // total line charging susceptance
  double tap_ratio = 1.0;   // from-side off-nominal turns ratio
  double phase_shift = 0.0;  // radians, from-side
  bool in_service = true;
};

struct GeneratorRecord {
  int bus = 0;  // internal index
  double p_set = 0.0;  // p.u. scheduled active output
  double v_set = 1.0;  // p.u. scheduled voltage magnitude
  double q_min = -1e30;
  double q_max = 1e30;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;  // internal order; buses[i].id retains the external number
  std::vector<BranchRecord> branches;
  std::vector<GeneratorRecord> generators;

  int bus_count() const { return static_cast<int>(buses.size()); }
  int branch_count() const { return static_cast<int>(branches.size()); }

  // free state variables: all angles except the slack reference, all magnitudes
  int state_dimension() const { return 2 * bus_count() - 1; }

  int slack_index() const {
    for (int i = 0; i < bus_count(); ++i)
      if (buses[i].kind == BusKind::Slack) return i;
    throw CaseError("case '" + name + "' has no slack bus");
  }

  int internal_index(int external_id) const {
    for (int i = 0; i < bus_count(); ++i)
      if (buses[i].id == external_id) return i;
    throw CaseError("case '" + name + "': unknown bus id " + std::to_string(external_id));
  }

  bool has_generator(int bus) const {
    for (const auto& g : generators)
      if (g.bus == bus) return true;
    return false;
  }

  // per-bus neighbor lists over in-service branches
  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(buses.size());
    for (const auto& br : branches) {
      if (!br.in_service) continue;
      adj[br.from_bus].push_back(br.to_bus);
      adj[br.to_bus].push_back(br.from_bus);
    }
    for (auto& v : adj) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return adj;
  }
};

// Checks structural invariants common to every ingest path. Branch and
// generator bus references are expected to already be internal indices.
inline void validate_case(const NetworkCase& net) {
  if (net.buses.empty()) throw CaseError("case '" + net.name + "': no buses");
  if (!(net.base_mva > 0.0)) throw CaseError("case '" + net.name + "': base_mva must be positive");

  int slack_count = 0;
  std::unordered_map<int, int> seen_ids;
  for (int i = 0; i < net.bus_count(); ++i) {
    const auto& b = net.buses[i];
    if (b.kind == BusKind::Slack) ++slack_count;
    if (!std::isfinite(b.load_p) || !std::isfinite(b.load_q))
      throw CaseError("bus " + std::to_string(b.id) + ": non-finite load");
    auto [it, inserted] = seen_ids.emplace(b.id, i);
    if (!inserted) throw CaseError("duplicate bus id " + std::to_string(b.id));
  }
  if (slack_count != 1)
    throw CaseError("case '" + net.name + "': expected exactly one slack bus, found " +
                    std::to_string(slack_count));

  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const auto& br = net.branches[k];
    if (br.from_bus < 0 || br.from_bus >= net.bus_count() || br.to_bus < 0 ||
        br.to_bus >= net.bus_count())
      throw CaseError("branch " + std::to_string(k + 1) + ": dangling endpoint");
    if (br.from_bus == br.to_bus)
      throw CaseError("branch " + std::to_string(k + 1) + ": identical endpoints");
    if (br.r == 0.0 && br.x == 0.0)
      throw CaseError("branch " + std::to_string(k + 1) + ": zero series impedance");
    if (br.tap_ratio <= 0.0)
      throw CaseError("branch " + std::to_string(k + 1) + ": non-positive tap ratio");
  }

  const int slack = net.slack_index();
  bool slack_has_gen = false;
  for (const auto& g : net.generators) {
    if (g.bus < 0 || g.bus >= net.bus_count())
      throw CaseError("generator references unknown bus");
    if (g.bus == slack) slack_has_gen = true;
  }
  if (!slack_has_gen)
    throw CaseError("case '" + net.name + "': slack bus carries no generator");
}

// Buses with no load, no generation and no shunt. Their exact power balance
// is enforced as an equality constraint instead of being measured.
inline std::vector<int> identify_zero_injection(const NetworkCase& net) {
  std::vector<int> out;
  for (int i = 0; i < net.bus_count(); ++i) {
    const auto& b = net.buses[i];
    if (b.load_p == 0.0 && b.load_q == 0.0 && b.shunt_g == 0.0 && b.shunt_b == 0.0 &&
        !net.has_generator(i))
      out.push_back(i);
  }
  return out;
}

}  // namespace rcse
