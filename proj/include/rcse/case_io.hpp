#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rcse/network.hpp"

namespace rcse {

// ---------------------------------------------------------------------------
// JSON case schema (the native, shipped format). Per-unit quantities,
// 1-based external bus ids:
//
//   { "name": str, "base_mva": num,
//     "buses":      [{ "id", "kind": "slack"|"pv"|"pq", "load_p", "load_q",
//                      "shunt_g"?, "shunt_b"?, "base_kv"? }],
//     "branches":   [{ "from", "to", "r", "x", "b_charging"?, "tap_ratio"?,
//                      "phase_shift"?, "status"? }],
//     "generators": [{ "bus", "p_set", "v_set"?, "q_min"?, "q_max"? }] }
// ---------------------------------------------------------------------------

namespace detail {

inline BusKind bus_kind_from_string(const std::string& s) {
  if (s == "slack") return BusKind::Slack;
  if (s == "pv") return BusKind::Pv;
  if (s == "pq") return BusKind::Pq;
  throw CaseError("unknown bus kind '" + s + "'");
}

inline const char* bus_kind_to_string(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::Pv: return "pv";
    default: return "pq";
  }
}

// remaps external bus ids (captured raw in from/to|bus) to internal indices
inline void remap_and_validate(NetworkCase& net, const std::vector<int>& branch_from_ext,
                               const std::vector<int>& branch_to_ext,
                               const std::vector<int>& gen_bus_ext) {
  std::unordered_map<int, int> index;
  for (int i = 0; i < net.bus_count(); ++i) {
    auto [it, inserted] = index.emplace(net.buses[i].id, i);
    if (!inserted) throw CaseError("duplicate bus id " + std::to_string(net.buses[i].id));
  }
  auto lookup = [&](int ext, const std::string& what) {
    auto it = index.find(ext);
    if (it == index.end())
      throw CaseError(what + " references unknown bus id " + std::to_string(ext));
    return it->second;
  };
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    net.branches[k].from_bus = lookup(branch_from_ext[k], "branch " + std::to_string(k + 1));
    net.branches[k].to_bus = lookup(branch_to_ext[k], "branch " + std::to_string(k + 1));
  }
  for (std::size_t k = 0; k < net.generators.size(); ++k)
    net.generators[k].bus = lookup(gen_bus_ext[k], "generator " + std::to_string(k + 1));
  validate_case(net);
}

}  // namespace detail

inline NetworkCase parse_case_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CaseError(std::string("case JSON: ") + e.what());
  }

  NetworkCase net;
  std::vector<int> bf, bt, gb;
  try {
    net.name = j.value("name", "unnamed");
    net.base_mva = j.at("base_mva").get<double>();
    for (const auto& jb : j.at("buses")) {
      BusRecord b;
      b.id = jb.at("id").get<int>();
      b.kind = detail::bus_kind_from_string(jb.at("kind").get<std::string>());
      b.load_p = jb.at("load_p").get<double>();
      b.load_q = jb.at("load_q").get<double>();
      b.shunt_g = jb.value("shunt_g", 0.0);
      b.shunt_b = jb.value("shunt_b", 0.0);
      b.base_kv = jb.value("base_kv", 0.0);
      net.buses.push_back(b);
    }
    for (const auto& jb : j.at("branches")) {
      BranchRecord br;
      bf.push_back(jb.at("from").get<int>());
      bt.push_back(jb.at("to").get<int>());
      br.r = jb.at("r").get<double>();
      br.x = jb.at("x").get<double>();
      br.b_charging = jb.value("b_charging", 0.0);
      br.tap_ratio = jb.value("tap_ratio", 1.0);
      br.phase_shift = jb.value("phase_shift", 0.0);
      br.in_service = jb.value("status", 1) != 0;
      net.branches.push_back(br);
    }
    for (const auto& jg : j.at("generators")) {
      GeneratorRecord g;
      gb.push_back(jg.at("bus").get<int>());
      g.p_set = jg.at("p_set").get<double>();
      g.v_set = jg.value("v_set", 1.0);
      g.q_min = jg.value("q_min", -1e30);
      g.q_max = jg.value("q_max", 1e30);
      net.generators.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CaseError(std::string("case JSON: ") + e.what());
  }
  detail::remap_and_validate(net, bf, bt, gb);
  return net;
}

inline std::string serialize_case_json(const NetworkCase& net) {
  nlohmann::json j;
  j["name"] = net.name;
  j["base_mva"] = net.base_mva;
  j["buses"] = nlohmann::json::array();
  for (const auto& b : net.buses) {
    j["buses"].push_back({{"id", b.id},
                          {"kind", detail::bus_kind_to_string(b.kind)},
                          {"load_p", b.load_p},
                          {"load_q", b.load_q},
                          {"shunt_g", b.shunt_g},
                          {"shunt_b", b.shunt_b},
                          {"base_kv", b.base_kv}});
  }
  j["branches"] = nlohmann::json::array();
  for (const auto& br : net.branches) {
    j["branches"].push_back({{"from", net.buses[br.from_bus].id},
                             {"to", net.buses[br.to_bus].id},
                             {"r", br.r},
                             {"x", br.x},
                             {"b_charging", br.b_charging},
                             {"tap_ratio", br.tap_ratio},
                             {"phase_shift", br.phase_shift},
                             {"status", br.in_service ? 1 : 0}});
  }
  j["generators"] = nlohmann::json::array();
  for (const auto& g : net.generators) {
    j["generators"].push_back({{"bus", net.buses[g.bus].id},
                               {"p_set", g.p_set},
                               {"v_set", g.v_set},
                               {"q_min", g.q_min},
                               {"q_max", g.q_max}});
  }
  return j.dump(1);
}

// ---------------------------------------------------------------------------
// MATPOWER-subset reader. Consumes mpc.baseMVA, mpc.bus, mpc.branch, mpc.gen.
// Column subsets actually used:
//   bus:    BUS_I TYPE PD QD GS BS AREA VM VA BASEKV   (1,2,3,4,5,6,10)
//   branch: F T R X B RATEA RATEB RATEC RATIO ANGLE STATUS   (1,2,3,4,5,9,10,11)
//   gen:    BUS PG QG QMAX QMIN VG MBASE STATUS   (1,2,4,5,6,8)
// PD/QD/GS/BS are MW/MVAr on baseMVA; ANGLE is degrees. RATIO 0 means a line.
// ---------------------------------------------------------------------------

namespace detail {

struct MpToken {
  double value;
  int line, col;
};

class MpScanner {
 public:
  explicit MpScanner(std::string_view text) : text_(text) {}

  // finds "mpc.<field>" and positions the cursor after '=', returns false if absent
  bool seek(const std::string& field) {
    const std::string key = "mpc." + field;
    std::size_t at = text_.find(key);
    while (at != std::string_view::npos) {
      const std::size_t after = at + key.size();
      if (after < text_.size() && (std::isspace(static_cast<unsigned char>(text_[after])) ||
                                   text_[after] == '=')) {
        pos_ = text_.find('=', after);
        if (pos_ == std::string_view::npos) return false;
        ++pos_;
        return true;
      }
      at = text_.find(key, after);
    }
    return false;
  }

  double scalar() {
    skip_ws();
    return number().value;
  }

  // reads "[ row ; row ; ... ]" where rows are whitespace-separated numbers
  std::vector<std::vector<MpToken>> matrix() {
    skip_ws();
    expect('[');
    std::vector<std::vector<MpToken>> rows;
    std::vector<MpToken> row;
    for (;;) {
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated matrix");
      const char c = text_[pos_];
      if (c == ']') {
        ++pos_;
        if (!row.empty()) rows.push_back(std::move(row));
        return rows;
      }
      if (c == ';' || c == '\n') {
        ++pos_;
        if (!row.empty()) {
          rows.push_back(std::move(row));
          row.clear();
        }
        continue;
      }
      row.push_back(number());
    }
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '%') {  // comment to end of line
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == ',') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c)
      fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  MpToken number() {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '+') ++pos_;
    const auto [line, col] = line_col(pos_);
    double v = 0.0;
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{}) fail("expected a number");
    pos_ += static_cast<std::size_t>(res.ptr - begin);
    return {v, line, col};
  }

  std::pair<int, int> line_col(std::size_t at) const {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < at && i < text_.size(); ++i) {
      if (text_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return {line, col};
  }

  [[noreturn]] void fail(const std::string& msg) const {
    const auto [line, col] = line_col(pos_);
    throw CaseError("matpower text " + std::to_string(line) + ":" + std::to_string(col) +
                    ": " + msg);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline NetworkCase parse_case_matpower(const std::string& text) {
  detail::MpScanner scan(text);
  NetworkCase net;
  net.name = "matpower-import";
  if (!scan.seek("baseMVA")) throw CaseError("matpower text: mpc.baseMVA not found");
  net.base_mva = scan.scalar();

  if (!scan.seek("bus")) throw CaseError("matpower text: mpc.bus not found");
  const auto bus_rows = scan.matrix();
  if (!scan.seek("branch")) throw CaseError("matpower text: mpc.branch not found");
  const auto branch_rows = scan.matrix();
  if (!scan.seek("gen")) throw CaseError("matpower text: mpc.gen not found");
  const auto gen_rows = scan.matrix();

  auto need = [](const std::vector<detail::MpToken>& row, std::size_t cols,
                 const char* table) {
    if (row.size() < cols)
      throw CaseError(std::string("matpower text ") + std::to_string(row.empty() ? 0 : row[0].line) +
                      ": " + table + " row has too few columns");
  };

  std::vector<int> bf, bt, gb;
  for (const auto& row : bus_rows) {
    need(row, 10, "bus");
    BusRecord b;
    b.id = static_cast<int>(row[0].value);
    const int type = static_cast<int>(row[1].value);
    b.kind = type == 3 ? BusKind::Slack : (type == 2 ? BusKind::Pv : BusKind::Pq);
    b.load_p = row[2].value / net.base_mva;
    b.load_q = row[3].value / net.base_mva;
    b.shunt_g = row[4].value / net.base_mva;
    b.shunt_b = row[5].value / net.base_mva;
    b.base_kv = row[9].value;
    net.buses.push_back(b);
  }
  for (const auto& row : branch_rows) {
    need(row, 11, "branch");
    BranchRecord br;
    bf.push_back(static_cast<int>(row[0].value));
    bt.push_back(static_cast<int>(row[1].value));
    br.r = row[2].value;
    br.x = row[3].value;
    br.b_charging = row[4].value;
    br.tap_ratio = row[8].value == 0.0 ? 1.0 : row[8].value;
    br.phase_shift = row[9].value * std::numbers::pi / 180.0;
    br.in_service = row[10].value != 0.0;
    net.branches.push_back(br);
  }
  for (const auto& row : gen_rows) {
    need(row, 6, "gen");
    if (row.size() >= 8 && row[7].value == 0.0) continue;  // out-of-service unit
    GeneratorRecord g;
    gb.push_back(static_cast<int>(row[0].value));
    g.p_set = row[1].value / net.base_mva;
    g.q_max = row[3].value / net.base_mva;
    g.q_min = row[4].value / net.base_mva;
    g.v_set = row[5].value;
    net.generators.push_back(g);
  }
  detail::remap_and_validate(net, bf, bt, gb);
  return net;
}

// Sniffs the format: JSON object or MATPOWER text.
inline NetworkCase parse_case(const std::string& text) {
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (c == '{') return parse_case_json(text);
    break;
  }
  return parse_case_matpower(text);
}

inline NetworkCase load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open case file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

}  // namespace rcse
