#pragma once

// Multi-cell slicing simulator. Each cell splits its bandwidth among N slices;
// slice demand follows per-slice traffic masks scaling the UE population, and
// a cell's spectral efficiency degrades with its neighbours' utilisation from
// the previous step.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "netslice/errors.hpp"

namespace netslice {

struct SliceRequirement {
  double throughput_target = 1.0;  // Mbit/s per user
  double delay_target = 1.0;       // ms
};

struct MaskParams {
  double offset = 0.5;
  double amplitude = 0.0;
  double period = 200.0;  // steps
  double phase = 0.0;     // radians
};

struct DelayModel {
  double min_ms = 0.5;
  double max_ms = 20.0;
  double epsilon = 0.05;  // floor on (1 - load)
};

struct CellConfig {
  int cell_id = 0;
  double bandwidth = 20.0;  // MHz
  std::vector<SliceRequirement> requirements;
  std::vector<int> neighbor_ids;
  int max_ues_per_slice = 32;
  double base_snr_db = 20.0;
  std::vector<double> interference_gains;  // aligned with neighbor_ids
  double mask_phase = 0.0;                 // added to every slice's mask phase
  std::string group;                       // requirement group label, informational
};

struct Scenario {
  std::string name;
  int slices = 4;
  std::vector<CellConfig> cells;
  std::vector<MaskParams> masks;         // one per slice
  double mask_noise_std = 0.0;
  std::vector<double> demand_per_ue;     // Mbit/s, one per slice
  DelayModel delay;

  int cell_count() const { return static_cast<int>(cells.size()); }
  /// Position of `cell_id` in `cells`; throws ConfigError when absent.
  int index_of(int cell_id) const;
  const CellConfig& cell(int cell_id) const { return cells[index_of(cell_id)]; }
};

/// Throws ConfigError describing the first inconsistency found.
void validate(const Scenario& scenario);

/// Per-slice resource shares of one cell: every share in [0,1], sum 1.
class PartitionAction {
 public:
  static constexpr double kTolerance = 1e-9;

  PartitionAction() = default;
  /// Throws ActionError unless `shares` lies on the simplex.
  explicit PartitionAction(Eigen::VectorXd shares);

  static PartitionAction equal(int slices);
  static bool is_valid(const Eigen::Ref<const Eigen::VectorXd>& shares, double tol = kTolerance);

  const Eigen::VectorXd& shares() const { return shares_; }
  double operator[](Eigen::Index n) const { return shares_(n); }
  Eigen::Index size() const { return shares_.size(); }

  bool approx_equal(const PartitionAction& other, double tol = kTolerance) const;
  friend bool operator==(const PartitionAction& a, const PartitionAction& b) { return a.shares_ == b.shares_; }

 private:
  Eigen::VectorXd shares_;
};

struct SliceMetrics {
  double throughput = 0.0;  // Mbit/s per user
  double delay = 0.0;       // ms
  double load = 0.0;        // [0,1]
  int ue_count = 0;
  double demand = 0.0;      // Mbit/s offered, kept for diagnostics

  friend bool operator==(const SliceMetrics&, const SliceMetrics&) = default;
};

struct NetworkState {
  std::int64_t step = 0;
  std::vector<std::vector<SliceMetrics>> per_cell;  // K x N
  std::vector<PartitionAction> actions;             // last executed action per cell
  std::vector<double> utilization;                  // per-cell busy bandwidth fraction
  std::uint64_t rng_state = 0;

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

struct StepResult {
  NetworkState state;
  std::vector<double> rewards;  // per cell
};

/// Traffic mask value in [0,1] for one slice at step t. `noise` is an
/// additive perturbation applied before clipping.
double traffic_mask(std::int64_t t, const MaskParams& mask, double noise = 0.0);

/// Shannon efficiency with load-coupled neighbour interference (bit/s/Hz).
double compute_efficiency(const CellConfig& cell, std::span<const double> neighbor_total_loads);

std::vector<SliceMetrics> compute_slice_metrics(const CellConfig& cell, const PartitionAction& action,
                                                std::span<const double> demands,
                                                std::span<const int> ue_counts, double efficiency,
                                                const DelayModel& delay = {});

/// Min over slices of min(throughput ratio, inverse delay ratio, 1). Slices
/// without users count as satisfied.
double reward(std::span<const SliceMetrics> metrics, std::span<const SliceRequirement> reqs);

/// Shares proportional to demand; equal split when total demand is zero.
PartitionAction baseline_action(std::span<const double> demands);

struct SliceTraffic {
  std::vector<int> ue_counts;
  std::vector<double> demands;
};

/// UE counts and offered load of one cell at step t. Pure in (scenario, seed,
/// cell, t), so callers may look ahead (the baseline does).
SliceTraffic slice_traffic(const Scenario& scenario, std::uint64_t seed, int cell_index, std::int64_t t);

NetworkState init_network(const Scenario& scenario, std::uint64_t seed);

/// Advance the whole network by one step. Interference uses the previous
/// step's neighbour utilisation.
StepResult step(const NetworkState& state, std::span<const PartitionAction> actions,
                const Scenario& scenario);

/// Busy fraction of a cell's bandwidth given its per-slice metrics and shares.
double utilization(std::span<const SliceMetrics> metrics, const PartitionAction& action);

}  // namespace netslice
