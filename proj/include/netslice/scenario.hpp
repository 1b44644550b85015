#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "netslice/env.hpp"

namespace netslice {

/// Requirement groups of the reference deployment.
SliceRequirement requirement(double throughput, double delay);
std::vector<SliceRequirement> requirement_group_a();  // (4,3,2,1) Mbit/s, (3,2,1,1) ms
std::vector<SliceRequirement> requirement_group_b();  // (2.5,2,1.5,1) Mbit/s, 1 ms

/// Shared radio and traffic settings of the reference deployment, no cells.
Scenario reference_template();

/// Four three-sector sites on a 2x2 grid. Sites 0 and 2 (cells 1-3, 7-9) use
/// group A, sites 1 and 3 (cells 4-6, 10-12) group B. Sectors of one site
/// interfere strongly, sectors of grid-adjacent sites weakly.
Scenario twelve_cell_scenario();

/// Cell 1 (group A), cell 2 (group B) and cell 3, a configuration clone of
/// cell 1, all mutually adjacent.
Scenario three_cell_scenario();

nlohmann::json to_json(const Scenario& s);
/// Parses and validates; throws ConfigError on malformed input.
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& s, const std::filesystem::path& path);

}  // namespace netslice
