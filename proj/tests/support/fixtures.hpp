#pragma once

#include <string>

#include "rcse/case_io.hpp"
#include "rcse/network.hpp"

namespace fixtures {

inline std::string case_path(const std::string& name) {
  return std::string(RCSE_SOURCE_DIR) + "/cases/" + name + ".json";
}

inline rcse::NetworkCase load(const std::string& name) {
  return rcse::load_case_file(case_path(name));
}

// slack -- pq pair joined by a single reactive branch (x = 0.1 by default)
inline rcse::NetworkCase two_bus(double r = 0.0, double x = 0.1, double load_p = 0.0,
                                 double load_q = 0.0) {
  rcse::NetworkCase net;
  net.name = "two-bus";
  net.base_mva = 100.0;
  rcse::BusRecord b1;
  b1.id = 1;
  b1.kind = rcse::BusKind::Slack;
  b1.base_kv = 10.0;
  rcse::BusRecord b2;
  b2.id = 2;
  b2.kind = rcse::BusKind::Pq;
  b2.load_p = load_p;
  b2.load_q = load_q;
  b2.base_kv = 10.0;
  net.buses = {b1, b2};
  rcse::BranchRecord br;
  br.from_bus = 0;
  br.to_bus = 1;
  br.r = r;
  br.x = x;
  net.branches = {br};
  rcse::GeneratorRecord g;
  g.bus = 0;
  net.generators = {g};
  return net;
}

// three buses in a chain; the middle bus carries no load/generation/shunt
inline rcse::NetworkCase three_bus_chain() {
  rcse::NetworkCase net;
  net.name = "three-bus-chain";
  net.base_mva = 100.0;
  for (int i = 1; i <= 3; ++i) {
    rcse::BusRecord b;
    b.id = i;
    b.kind = i == 1 ? rcse::BusKind::Slack : rcse::BusKind::Pq;
    b.base_kv = 10.0;
    if (i == 3) {
      b.load_p = 0.5;
      b.load_q = 0.2;
    }
    net.buses.push_back(b);
  }
  for (int i = 0; i < 2; ++i) {
    rcse::BranchRecord br;
    br.from_bus = i;
    br.to_bus = i + 1;
    br.r = 0.01;
    br.x = 0.05;
    net.branches.push_back(br);
  }
  rcse::GeneratorRecord g;
  g.bus = 0;
  net.generators = {g};
  return net;
}

}  // namespace fixtures
