#include "netslice/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <utility>

namespace netslice {

namespace {

constexpr double kCapacityFloor = 1e-12;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Standard normal draw keyed by (seed, t, cell, slice); Box-Muller on two
// hashed uniforms.
double keyed_normal(std::uint64_t seed, std::int64_t t, int cell, int slice) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(cell) << 20) ^ static_cast<std::uint64_t>(slice));
  const std::uint64_t h2 = splitmix64(h);
  const double u1 = (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

int Scenario::index_of(int cell_id) const {
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].cell_id == cell_id) return static_cast<int>(i);
  throw ConfigError("unknown cell id " + std::to_string(cell_id));
}

void validate(const Scenario& s) {
  if (s.cells.empty()) throw ConfigError("scenario declares no cells");
  if (s.slices < 1) throw ConfigError("scenario needs at least one slice");
  if (static_cast<int>(s.masks.size()) != s.slices)
    throw ConfigError("need one traffic mask per slice");
  if (static_cast<int>(s.demand_per_ue.size()) != s.slices)
    throw ConfigError("need one per-UE demand rate per slice");
  for (double r : s.demand_per_ue)
    if (!(r >= 0.0)) throw ConfigError("per-UE demand rates must be non-negative");
  for (const auto& m : s.masks)
    if (!(m.period > 0.0)) throw ConfigError("traffic mask period must be positive");
  if (!(s.delay.min_ms > 0.0) || !(s.delay.max_ms >= s.delay.min_ms) || !(s.delay.epsilon > 0.0) ||
      s.delay.epsilon > 1.0)
    throw ConfigError("invalid delay model");
  if (!(s.mask_noise_std >= 0.0)) throw ConfigError("mask noise must be non-negative");

  std::set<int> ids;
  for (const auto& c : s.cells)
    if (!ids.insert(c.cell_id).second) throw ConfigError("duplicate cell id " + std::to_string(c.cell_id));

  for (const auto& c : s.cells) {
    const std::string who = "cell " + std::to_string(c.cell_id) + ": ";
    if (!(c.bandwidth > 0.0)) throw ConfigError(who + "bandwidth must be positive");
    if (c.max_ues_per_slice < 1) throw ConfigError(who + "max_ues_per_slice must be >= 1");
    if (static_cast<int>(c.requirements.size()) != s.slices)
      throw ConfigError(who + "needs one requirement per slice");
    for (const auto& r : c.requirements)
      if (!(r.throughput_target > 0.0) || !(r.delay_target > 0.0))
        throw ConfigError(who + "requirement targets must be positive");
    if (c.interference_gains.size() != c.neighbor_ids.size())
      throw ConfigError(who + "one interference gain per neighbour required");
    std::set<int> seen;
    for (std::size_t j = 0; j < c.neighbor_ids.size(); ++j) {
      const int nb = c.neighbor_ids[j];
      if (nb == c.cell_id) throw ConfigError(who + "lists itself as a neighbour");
      if (!ids.count(nb)) throw ConfigError(who + "unknown neighbour " + std::to_string(nb));
      if (!seen.insert(nb).second) throw ConfigError(who + "duplicate neighbour " + std::to_string(nb));
      if (!(c.interference_gains[j] >= 0.0)) throw ConfigError(who + "interference gains must be >= 0");
      const auto& other = s.cell(nb);
      if (std::find(other.neighbor_ids.begin(), other.neighbor_ids.end(), c.cell_id) ==
          other.neighbor_ids.end())
        throw ConfigError("asymmetric neighbour declaration between cells " + std::to_string(c.cell_id) +
                          " and " + std::to_string(nb));
    }
  }
}

// ---------------------------------------------------------------------------

PartitionAction::PartitionAction(Eigen::VectorXd shares) : shares_(std::move(shares)) {
  if (!is_valid(shares_))
    throw ActionError("partition action violates the simplex constraint");
}

PartitionAction PartitionAction::equal(int slices) {
  if (slices < 1) throw DimensionError("equal partition needs at least one slice");
  return PartitionAction(Eigen::VectorXd::Constant(slices, 1.0 / slices));
}

bool PartitionAction::is_valid(const Eigen::Ref<const Eigen::VectorXd>& shares, double tol) {
  if (shares.size() == 0 || !shares.allFinite()) return false;
  if ((shares.array() < 0.0).any() || (shares.array() > 1.0).any()) return false;
  return std::abs(shares.sum() - 1.0) <= tol;
}

bool PartitionAction::approx_equal(const PartitionAction& other, double tol) const {
  return shares_.size() == other.shares_.size() &&
         (shares_ - other.shares_).cwiseAbs().maxCoeff() <= tol;
}

// ---------------------------------------------------------------------------

double traffic_mask(std::int64_t t, const MaskParams& mask, double noise) {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / mask.period + mask.phase;
  return std::clamp(mask.offset + mask.amplitude * std::sin(angle) + noise, 0.0, 1.0);
}

double compute_efficiency(const CellConfig& cell, std::span<const double> neighbor_total_loads) {
  if (neighbor_total_loads.size() != cell.neighbor_ids.size())
    throw DimensionError("compute_efficiency: expected " + std::to_string(cell.neighbor_ids.size()) +
                         " neighbour loads, got " + std::to_string(neighbor_total_loads.size()));
  double interference = 0.0;
  for (std::size_t j = 0; j < neighbor_total_loads.size(); ++j)
    interference += cell.interference_gains[j] * std::min(1.0, std::max(0.0, neighbor_total_loads[j]));
  const double snr = std::pow(10.0, cell.base_snr_db / 10.0);
  return std::log2(1.0 + snr / (1.0 + interference));
}

std::vector<SliceMetrics> compute_slice_metrics(const CellConfig& cell, const PartitionAction& action,
                                                std::span<const double> demands,
                                                std::span<const int> ue_counts, double efficiency,
                                                const DelayModel& delay) {
  const auto n = static_cast<std::size_t>(action.size());
  if (demands.size() != n || ue_counts.size() != n)
    throw DimensionError("compute_slice_metrics: demands/ue_counts must match the action length");
  if (!(efficiency > 0.0)) throw DomainError("compute_slice_metrics: efficiency must be positive");

  std::vector<SliceMetrics> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double demand = demands[i];
    if (!(demand >= 0.0)) throw DomainError("compute_slice_metrics: negative demand");
    auto& m = out[i];
    m.ue_count = ue_counts[i];
    m.demand = demand;
    const double capacity = action[static_cast<Eigen::Index>(i)] * cell.bandwidth * efficiency;
    if (demand == 0.0) {
      m.load = 0.0;
      m.throughput = 0.0;
      m.delay = delay.min_ms;
      continue;
    }
    if (capacity <= 0.0) {
      m.load = 1.0;
      m.throughput = 0.0;
      m.delay = delay.max_ms;
      continue;
    }
    m.load = std::min(1.0, demand / std::max(capacity, kCapacityFloor));
    m.throughput = std::min(demand, capacity) / std::max(ue_counts[i], 1);
    m.delay = std::min(delay.max_ms, delay.min_ms / std::max(delay.epsilon, 1.0 - m.load));
  }
  return out;
}

double reward(std::span<const SliceMetrics> metrics, std::span<const SliceRequirement> reqs) {
  if (metrics.size() != reqs.size()) throw DimensionError("reward: metrics and requirements differ in length");
  double r = 1.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& m = metrics[i];
    if (m.ue_count == 0) continue;
    const double thr = m.throughput / reqs[i].throughput_target;
    const double del = m.delay > 0.0 ? reqs[i].delay_target / m.delay : 1.0;
    r = std::min({r, thr, del});
  }
  return std::clamp(r, 0.0, 1.0);
}

PartitionAction baseline_action(std::span<const double> demands) {
  const auto n = static_cast<Eigen::Index>(demands.size());
  Eigen::VectorXd shares(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    shares(i) = std::max(0.0, demands[static_cast<std::size_t>(i)]);
    total += shares(i);
  }
  if (total <= 0.0) return PartitionAction::equal(static_cast<int>(n));
  shares /= total;
  // Renormalising can leave a 1-ulp excess; the largest share absorbs it.
  Eigen::Index arg = 0;
  shares.maxCoeff(&arg);
  shares(arg) += 1.0 - shares.sum();
  return PartitionAction(std::move(shares));
}

SliceTraffic slice_traffic(const Scenario& scenario, std::uint64_t seed, int cell_index, std::int64_t t) {
  const auto& cell = scenario.cells[static_cast<std::size_t>(cell_index)];
  SliceTraffic traffic;
  traffic.ue_counts.resize(static_cast<std::size_t>(scenario.slices));
  traffic.demands.resize(static_cast<std::size_t>(scenario.slices));
  for (int n = 0; n < scenario.slices; ++n) {
    MaskParams mask = scenario.masks[static_cast<std::size_t>(n)];
    mask.phase += cell.mask_phase;
    const double noise = scenario.mask_noise_std > 0.0
                             ? scenario.mask_noise_std * keyed_normal(seed, t, cell.cell_id, n)
                             : 0.0;
    const double tau = traffic_mask(t, mask, noise);
    const int ues = static_cast<int>(std::lround(cell.max_ues_per_slice * tau));
    traffic.ue_counts[static_cast<std::size_t>(n)] = ues;
    traffic.demands[static_cast<std::size_t>(n)] = ues * scenario.demand_per_ue[static_cast<std::size_t>(n)];
  }
  return traffic;
}

double utilization(std::span<const SliceMetrics> metrics, const PartitionAction& action) {
  double u = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) u += action[static_cast<Eigen::Index>(i)] * metrics[i].load;
  return std::clamp(u, 0.0, 1.0);
}

namespace {

void evaluate_cells(NetworkState& next, std::span<const double> prev_utilization,
                    const Scenario& scenario, std::vector<double>* rewards) {
  const int k_cells = scenario.cell_count();
  next.per_cell.resize(static_cast<std::size_t>(k_cells));
  next.utilization.assign(static_cast<std::size_t>(k_cells), 0.0);
  if (rewards) rewards->assign(static_cast<std::size_t>(k_cells), 0.0);
  std::vector<double> neighbor_loads;
  for (int k = 0; k < k_cells; ++k) {
    const auto& cell = scenario.cells[static_cast<std::size_t>(k)];
    neighbor_loads.clear();
    for (int nb : cell.neighbor_ids)
      neighbor_loads.push_back(prev_utilization[static_cast<std::size_t>(scenario.index_of(nb))]);
    const double eff = compute_efficiency(cell, neighbor_loads);
    const auto traffic = slice_traffic(scenario, next.rng_state, k, next.step);
    const auto& action = next.actions[static_cast<std::size_t>(k)];
    auto metrics = compute_slice_metrics(cell, action, traffic.demands, traffic.ue_counts, eff, scenario.delay);
    next.utilization[static_cast<std::size_t>(k)] = utilization(metrics, action);
    if (rewards) (*rewards)[static_cast<std::size_t>(k)] = reward(metrics, cell.requirements);
    next.per_cell[static_cast<std::size_t>(k)] = std::move(metrics);
  }
}

}  // namespace

NetworkState init_network(const Scenario& scenario, std::uint64_t seed) {
  validate(scenario);
  NetworkState state;
  state.step = 0;
  state.rng_state = seed;
  state.actions.assign(static_cast<std::size_t>(scenario.cell_count()), PartitionAction::equal(scenario.slices));
  const std::vector<double> idle(static_cast<std::size_t>(scenario.cell_count()), 0.0);
  evaluate_cells(state, idle, scenario, nullptr);
  return state;
}

StepResult step(const NetworkState& state, std::span<const PartitionAction> actions, const Scenario& scenario) {
  const auto k_cells = static_cast<std::size_t>(scenario.cell_count());
  if (actions.size() != k_cells)
    throw ActionError("step: expected " + std::to_string(k_cells) + " actions, got " +
                      std::to_string(actions.size()));
  for (std::size_t k = 0; k < k_cells; ++k) {
    if (actions[k].size() != scenario.slices || !PartitionAction::is_valid(actions[k].shares()))
      throw ActionError("step: invalid action for cell " + std::to_string(scenario.cells[k].cell_id));
  }
  StepResult result;
  result.state.step = state.step + 1;
  result.state.rng_state = state.rng_state;
  result.state.actions.assign(actions.begin(), actions.end());
  evaluate_cells(result.state, state.utilization, scenario, &result.rewards);
  return result;
}

}  // namespace netslice
