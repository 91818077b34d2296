#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcse/network.hpp"
#include "rcse/random.hpp"

namespace rcse {

enum class ChannelKind { VMag, VAngle, PInjection, QInjection, PFlow, QFlow };
enum class ChannelSource { Pmu, Scada, SmartMeter };
enum class RedundancyLevel { Lowest, Low, High, Highest };

// channel subsets used by measurement-function evaluation
enum class Subset { All, Available, Delayed, ZeroInjection };

inline const char* to_string(RedundancyLevel level) {
  switch (level) {
    case RedundancyLevel::Lowest: return "lowest";
    case RedundancyLevel::Low: return "low";
    case RedundancyLevel::High: return "high";
    default: return "highest";
  }
}

inline RedundancyLevel redundancy_from_string(const std::string& s) {
  if (s == "lowest") return RedundancyLevel::Lowest;
  if (s == "low") return RedundancyLevel::Low;
  if (s == "high") return RedundancyLevel::High;
  if (s == "highest") return RedundancyLevel::Highest;
  throw std::invalid_argument("unknown redundancy level '" + s + "'");
}

// real-time channel count target as a fraction of the state dimension
inline double redundancy_target(RedundancyLevel level) {
  switch (level) {
    case RedundancyLevel::Lowest: return 0.40;
    case RedundancyLevel::Low: return 0.55;
    case RedundancyLevel::High: return 0.70;
    default: return 0.90;
  }
}

inline bool level_has_pmu(RedundancyLevel level) {
  return level == RedundancyLevel::Low || level == RedundancyLevel::Highest;
}

struct MeasurementChannel {
  ChannelKind kind = ChannelKind::VMag;
  ChannelSource source = ChannelSource::Pmu;
  int bus = -1;     // voltage / injection channels
  int branch = -1;  // flow channels
  BranchEnd end = BranchEnd::From;
};

struct MeasurementPlan {
  std::string id;
  std::vector<MeasurementChannel> channels;
  std::vector<int> available_idx;  // ascending, disjoint from delayed_idx
  std::vector<int> delayed_idx;
  Eigen::VectorXd sigma;   // per channel
  Eigen::VectorXd weight;  // 1/sigma
  RedundancyLevel level = RedundancyLevel::High;
  std::vector<int> zero_injection_buses;  // sorted internal indices

  // Buses deliberately kept clear of real-time channels (and chosen away from
  // zero-injection neighbors) so that the available set alone can never
  // reconstruct the state. Smart meters still cover them retrospectively.
  std::vector<int> dark_buses;

  int channel_count() const { return static_cast<int>(channels.size()); }
  int available_count() const { return static_cast<int>(available_idx.size()); }
  int delayed_count() const { return static_cast<int>(delayed_idx.size()); }

  const std::vector<int>& subset_indices(Subset s) const {
    static const std::vector<int> empty;
    switch (s) {
      case Subset::Available: return available_idx;
      case Subset::Delayed: return delayed_idx;
      default: return empty;  // All/ZeroInjection are not index-addressed
    }
  }

  Eigen::VectorXd weights_for(Subset s) const {
    if (s == Subset::All) return weight;
    const auto& idx = subset_indices(s);
    Eigen::VectorXd w(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) w[i] = weight[idx[i]];
    return w;
  }
};

struct PlanOptions {
  double sigma_power = 0.01;    // p.u., injections and flows
  double sigma_voltage = 0.001;  // p.u. / rad, magnitudes and angles
  // Fraction of the eligible bus pool that SCADA injection pairs may cover;
  // the rest of the redundancy target is met with branch-flow pairs, which
  // keeps the real-time channel count while widening the delayed set.
  double scada_share_cap = 1.0;
  // Number of disjoint dark neighborhoods kept clear of real-time channels.
  int dark_regions = 1;
};

namespace detail {

inline bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace detail

// Deterministic measurement placement for a redundancy level. PMU channels
// (when the level has them) sit at the slack bus plus seeded-random buses;
// SCADA p/q injection pairs cover a seeded-random bus subset sized from the
// level's target R = m_a / (2n-1); when the eligible injection pool cannot
// reach the target, seeded-random branch-flow pairs top it up. Every
// remaining non-zero-injection bus gets a delayed smart-meter p/q pair.
inline MeasurementPlan plan_measurements(const NetworkCase& net, RedundancyLevel level,
                                         std::uint64_t seed, const PlanOptions& opts = {}) {
  const int n_bus = net.bus_count();
  const int n_states = net.state_dimension();
  const int slack = net.slack_index();
  const auto zi = identify_zero_injection(net);
  const auto adj = net.adjacency();

  std::vector<bool> is_zi(n_bus, false);
  for (int b : zi) is_zi[b] = true;

  Rng rng(mix_seed(seed, 101 + static_cast<std::uint64_t>(level)));

  // dark regions: disjoint neighborhoods around centers that are not the
  // slack, not adjacent to it, not zero-injection and with no zero-injection
  // neighbor; a center's columns then vanish from every real-time row
  std::vector<int> dark;
  std::vector<bool> is_dark(n_bus, false);
  const int want_regions = std::max(1, opts.dark_regions);
  for (int region = 0; region < want_regions; ++region) {
    std::vector<int> candidates;
    for (int u = 0; u < n_bus; ++u) {
      if (u == slack || is_zi[u] || is_dark[u]) continue;
      if (detail::contains(adj[u], slack)) continue;
      bool clean = true;
      for (int v : adj[u])
        if (is_zi[v] || is_dark[v]) clean = false;
      if (clean) candidates.push_back(u);
    }
    if (candidates.empty() && region == 0) {
      // fall back to any non-slack, non-zero-injection bus away from the slack
      for (int u = 0; u < n_bus; ++u)
        if (u != slack && !is_zi[u] && !detail::contains(adj[u], slack))
          candidates.push_back(u);
    }
    if (candidates.empty()) {
      if (region == 0)
        throw std::invalid_argument(
            "plan_measurements: case too small for an unobservable plan");
      break;  // fewer regions fit on this case
    }
    // prefer high-degree centers: a larger dark neighborhood leaves more of
    // the state to be inferred from history
    int best_degree = 0;
    for (int u : candidates)
      best_degree = std::max(best_degree, static_cast<int>(adj[u].size()));
    std::vector<int> top_candidates;
    for (int u : candidates)
      if (static_cast<int>(adj[u].size()) == best_degree) top_candidates.push_back(u);
    const int center = top_candidates[rng.below(top_candidates.size())];
    dark.push_back(center);
    is_dark[center] = true;
    for (int v : adj[center]) {
      if (!is_dark[v]) dark.push_back(v);
      is_dark[v] = true;
    }
  }
  std::sort(dark.begin(), dark.end());

  // PMU buses
  std::vector<int> pmu_buses;
  if (level_has_pmu(level)) {
    const int pmu_count = std::max<int>(2, static_cast<int>(std::lround(0.075 * n_states)));
    pmu_buses.push_back(slack);
    std::vector<int> pool;
    for (int b = 0; b < n_bus; ++b)
      if (b != slack && !is_zi[b] && !is_dark[b]) pool.push_back(b);
    for (int pick : rng.sample(static_cast<int>(pool.size()),
                               std::min<int>(pmu_count - 1, static_cast<int>(pool.size()))))
      pmu_buses.push_back(pool[pick]);
    std::sort(pmu_buses.begin(), pmu_buses.end());
  }

  // The substation busbar voltage is always telemetered. Without a single
  // magnitude channel the no-PMU scenarios leave the network-wide voltage
  // level quasi-unobservable on a shunt-free feeder (uniform scaling changes
  // injections only through the curvature of h), and retrospective estimates
  // drift along that mode.
  const bool slack_vmag = !level_has_pmu(level);

  // SCADA injection buses sized from the redundancy target
  const int target_channels =
      static_cast<int>(std::lround(redundancy_target(level) * n_states));
  int remaining = target_channels - 2 * static_cast<int>(pmu_buses.size()) -
                  (slack_vmag ? 1 : 0);
  if (remaining < 2)
    throw std::invalid_argument("plan_measurements: target redundancy unreachable");

  std::vector<int> scada_pool;
  for (int b = 0; b < n_bus; ++b)
    if (!is_zi[b] && !is_dark[b]) scada_pool.push_back(b);
  const int scada_cap = static_cast<int>(
      std::floor(opts.scada_share_cap * static_cast<double>(scada_pool.size())));
  const int scada_count =
      std::min<int>({remaining / 2, static_cast<int>(scada_pool.size()), scada_cap});
  std::vector<int> scada_buses;
  for (int pick : rng.sample(static_cast<int>(scada_pool.size()), scada_count))
    scada_buses.push_back(scada_pool[pick]);
  std::sort(scada_buses.begin(), scada_buses.end());
  remaining -= 2 * scada_count;

  // branch-flow pairs top up the available count; both endpoints must stay
  // outside the dark region and off zero-injection buses
  std::vector<int> flow_branches;
  if (remaining >= 2) {
    std::vector<int> branch_pool;
    for (int k = 0; k < net.branch_count(); ++k) {
      const auto& br = net.branches[k];
      if (!br.in_service) continue;
      if (is_dark[br.from_bus] || is_dark[br.to_bus]) continue;
      if (is_zi[br.from_bus] || is_zi[br.to_bus]) continue;
      branch_pool.push_back(k);
    }
    const int pairs = std::min<int>((remaining + 1) / 2, static_cast<int>(branch_pool.size()));
    for (int pick : rng.sample(static_cast<int>(branch_pool.size()), pairs))
      flow_branches.push_back(branch_pool[pick]);
    std::sort(flow_branches.begin(), flow_branches.end());
    remaining -= 2 * pairs;
  }

  // the share cap is soft: when the flow pool cannot close the remaining gap,
  // extra scada buses do, so the redundancy target always wins
  if (remaining >= 2 && scada_count < static_cast<int>(scada_pool.size())) {
    std::vector<int> leftover;
    for (int b : scada_pool)
      if (!detail::contains(scada_buses, b)) leftover.push_back(b);
    const int extra = std::min<int>((remaining + 1) / 2, static_cast<int>(leftover.size()));
    for (int pick : rng.sample(static_cast<int>(leftover.size()), extra))
      scada_buses.push_back(leftover[pick]);
    std::sort(scada_buses.begin(), scada_buses.end());
    remaining -= 2 * extra;
  }

  // delayed smart meters at every non-zero-injection bus without SCADA
  std::vector<int> sm_buses;
  for (int b = 0; b < n_bus; ++b)
    if (!is_zi[b] && !detail::contains(scada_buses, b)) sm_buses.push_back(b);

  MeasurementPlan plan;
  plan.id = net.name + "/" + to_string(level) + "/" + std::to_string(seed);
  plan.level = level;
  plan.zero_injection_buses = zi;
  plan.dark_buses = dark;

  auto push = [&plan](ChannelKind kind, ChannelSource source, int bus, int branch = -1,
                      BranchEnd end = BranchEnd::From) {
    MeasurementChannel c;
    c.kind = kind;
    c.source = source;
    c.bus = bus;
    c.branch = branch;
    c.end = end;
    plan.channels.push_back(c);
  };

  if (slack_vmag) push(ChannelKind::VMag, ChannelSource::Scada, slack);
  for (int b : pmu_buses) push(ChannelKind::VMag, ChannelSource::Pmu, b);
  for (int b : pmu_buses) push(ChannelKind::VAngle, ChannelSource::Pmu, b);
  for (int b : scada_buses) push(ChannelKind::PInjection, ChannelSource::Scada, b);
  for (int b : scada_buses) push(ChannelKind::QInjection, ChannelSource::Scada, b);
  for (int k : flow_branches) push(ChannelKind::PFlow, ChannelSource::Scada, -1, k);
  for (int k : flow_branches) push(ChannelKind::QFlow, ChannelSource::Scada, -1, k);
  const int m_a = plan.channel_count();
  for (int b : sm_buses) push(ChannelKind::PInjection, ChannelSource::SmartMeter, b);
  for (int b : sm_buses) push(ChannelKind::QInjection, ChannelSource::SmartMeter, b);
  const int m = plan.channel_count();

  const double achieved = static_cast<double>(m_a) / n_states;
  if (std::abs(achieved - redundancy_target(level)) > 0.05)
    throw std::invalid_argument("plan_measurements: achieved redundancy " +
                                std::to_string(achieved) + " misses target for level " +
                                to_string(level));

  plan.available_idx.resize(m_a);
  for (int i = 0; i < m_a; ++i) plan.available_idx[i] = i;
  plan.delayed_idx.resize(m - m_a);
  for (int i = m_a; i < m; ++i) plan.delayed_idx[i - m_a] = i;

  plan.sigma.resize(m);
  for (int i = 0; i < m; ++i) {
    const auto kind = plan.channels[i].kind;
    const bool voltage_like = kind == ChannelKind::VMag || kind == ChannelKind::VAngle;
    plan.sigma[i] = voltage_like ? opts.sigma_voltage : opts.sigma_power;
  }
  plan.weight = plan.sigma.cwiseInverse();
  return plan;
}

}  // namespace rcse
