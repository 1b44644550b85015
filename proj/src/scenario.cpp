#include "netslice/scenario.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

namespace netslice {

using nlohmann::json;

SliceRequirement requirement(double throughput, double delay) { return {throughput, delay}; }

std::vector<SliceRequirement> requirement_group_a() {
  return {requirement(4.0, 3.0), requirement(3.0, 2.0), requirement(2.0, 1.0), requirement(1.0, 1.0)};
}

std::vector<SliceRequirement> requirement_group_b() {
  return {requirement(2.5, 1.0), requirement(2.0, 1.0), requirement(1.5, 1.0), requirement(1.0, 1.0)};
}

Scenario reference_template() {
  Scenario s;
  s.slices = 4;
  s.demand_per_ue = {4.0, 3.0, 2.0, 1.0};
  for (int n = 0; n < 4; ++n) {
    MaskParams m;
    m.offset = 0.2;
    m.amplitude = 0.12;
    m.period = 200.0;
    m.phase = n * std::numbers::pi / 2.0;
    s.masks.push_back(m);
  }
  s.mask_noise_std = 0.005;
  s.delay = DelayModel{0.5, 20.0, 0.05};
  return s;
}

Scenario twelve_cell_scenario() {
  Scenario s = reference_template();
  s.name = "twelve-cell";
  constexpr double kSameSite = 1.5;
  constexpr double kAdjacentSite = 0.5;
  // 2x2 grid of sites; diagonal sites are not adjacent.
  auto adjacent = [](int a, int b) {
    const int ax = a % 2, ay = a / 2, bx = b % 2, by = b / 2;
    return std::abs(ax - bx) + std::abs(ay - by) == 1;
  };
  for (int id = 1; id <= 12; ++id) {
    const int site = (id - 1) / 3;
    const int sector = (id - 1) % 3;
    CellConfig c;
    c.cell_id = id;
    c.bandwidth = 20.0;
    c.max_ues_per_slice = 32;
    c.base_snr_db = 20.0;
    const bool group_a = site == 0 || site == 2;
    c.group = group_a ? "A" : "B";
    c.requirements = group_a ? requirement_group_a() : requirement_group_b();
    c.mask_phase = 0.4 * sector + 0.9 * site;
    for (int other = 1; other <= 12; ++other) {
      if (other == id) continue;
      const int other_site = (other - 1) / 3;
      if (other_site == site) {
        c.neighbor_ids.push_back(other);
        c.interference_gains.push_back(kSameSite);
      } else if (adjacent(site, other_site)) {
        c.neighbor_ids.push_back(other);
        c.interference_gains.push_back(kAdjacentSite);
      }
    }
    s.cells.push_back(std::move(c));
  }
  return s;
}

Scenario three_cell_scenario() {
  Scenario s = reference_template();
  s.name = "three-cell";
  constexpr double kGain = 1.5;
  auto make = [&](int id, bool group_a, double phase) {
    CellConfig c;
    c.cell_id = id;
    c.bandwidth = 20.0;
    c.max_ues_per_slice = 32;
    c.base_snr_db = 20.0;
    c.group = group_a ? "A" : "B";
    c.requirements = group_a ? requirement_group_a() : requirement_group_b();
    c.mask_phase = phase;
    for (int other = 1; other <= 3; ++other) {
      if (other == id) continue;
      c.neighbor_ids.push_back(other);
      c.interference_gains.push_back(kGain);
    }
    return c;
  };
  s.cells.push_back(make(1, true, 0.0));
  s.cells.push_back(make(2, false, 0.9));
  s.cells.push_back(make(3, true, 0.0));
  return s;
}

// ---------------------------------------------------------------------------

json to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["slices"] = s.slices;
  j["demand_per_ue_mbps"] = s.demand_per_ue;
  j["mask_noise_std"] = s.mask_noise_std;
  j["delay"] = {{"min_ms", s.delay.min_ms}, {"max_ms", s.delay.max_ms}, {"epsilon", s.delay.epsilon}};
  j["masks"] = json::array();
  for (const auto& m : s.masks)
    j["masks"].push_back({{"offset", m.offset}, {"amplitude", m.amplitude}, {"period", m.period}, {"phase", m.phase}});
  j["cells"] = json::array();
  for (const auto& c : s.cells) {
    json jc;
    jc["id"] = c.cell_id;
    jc["group"] = c.group;
    jc["bandwidth_mhz"] = c.bandwidth;
    jc["max_ues_per_slice"] = c.max_ues_per_slice;
    jc["base_snr_db"] = c.base_snr_db;
    jc["mask_phase"] = c.mask_phase;
    jc["neighbors"] = c.neighbor_ids;
    jc["interference_gains"] = c.interference_gains;
    jc["requirements"] = json::array();
    for (const auto& r : c.requirements)
      jc["requirements"].push_back({{"throughput_mbps", r.throughput_target}, {"delay_ms", r.delay_target}});
    j["cells"].push_back(std::move(jc));
  }
  return j;
}

namespace {
std::vector<SliceRequirement> parse_requirements(const json& arr) {
  std::vector<SliceRequirement> out;
  for (const auto& r : arr) out.push_back({r.at("throughput_mbps").get<double>(), r.at("delay_ms").get<double>()});
  return out;
}
}  // namespace

Scenario scenario_from_json(const json& j) {
  Scenario s;
  try {
    s.name = j.value("name", std::string{});
    s.slices = j.at("slices").get<int>();
    s.demand_per_ue = j.at("demand_per_ue_mbps").get<std::vector<double>>();
    s.mask_noise_std = j.value("mask_noise_std", 0.0);
    if (j.contains("delay")) {
      const auto& d = j["delay"];
      s.delay.min_ms = d.value("min_ms", s.delay.min_ms);
      s.delay.max_ms = d.value("max_ms", s.delay.max_ms);
      s.delay.epsilon = d.value("epsilon", s.delay.epsilon);
    }
    for (const auto& m : j.at("masks")) {
      MaskParams p;
      p.offset = m.value("offset", p.offset);
      p.amplitude = m.value("amplitude", p.amplitude);
      p.period = m.value("period", p.period);
      p.phase = m.value("phase", p.phase);
      s.masks.push_back(p);
    }
    // Named requirement groups may be referenced by cells instead of inline lists.
    std::map<std::string, std::vector<SliceRequirement>> groups;
    if (j.contains("requirement_groups"))
      for (const auto& [name, reqs] : j["requirement_groups"].items()) groups[name] = parse_requirements(reqs);
    for (const auto& jc : j.at("cells")) {
      CellConfig c;
      c.cell_id = jc.at("id").get<int>();
      c.group = jc.value("group", std::string{});
      c.bandwidth = jc.value("bandwidth_mhz", c.bandwidth);
      c.max_ues_per_slice = jc.value("max_ues_per_slice", c.max_ues_per_slice);
      c.base_snr_db = jc.value("base_snr_db", c.base_snr_db);
      c.mask_phase = jc.value("mask_phase", 0.0);
      c.neighbor_ids = jc.value("neighbors", std::vector<int>{});
      c.interference_gains = jc.value("interference_gains", std::vector<double>{});
      if (jc.contains("requirements")) {
        c.requirements = parse_requirements(jc["requirements"]);
      } else {
        auto it = groups.find(c.group);
        if (it == groups.end())
          throw ConfigError("cell " + std::to_string(c.cell_id) + " has no requirements and no known group");
        c.requirements = it->second;
      }
      s.cells.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  validate(s);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("scenario " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(s).dump(2) << '\n';
}

}  // namespace netslice
