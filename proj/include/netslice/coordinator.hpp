#pragma once

// Synchronised stepping of the whole network with one controller per cell.
// All observations for step t are assembled from the state produced by step
// t-1 before any cell acts, so neighbour messages always refer to the same
// step.

#include <cstdint>
#include <string>
#include <vector>

#include "netslice/env.hpp"
#include "netslice/td3.hpp"

namespace netslice::td3 {

enum class Phase { Default, Exploration, Training, Evaluation };
const char* phase_name(Phase p);

/// Per-agent phase lengths in steps. During exploration the agent acts with
/// logit-space noise decaying linearly from `noise_start` to `noise_end`
/// (or draws flat Dirichlet actions when `random_exploration` is set);
/// training keeps `noise_end`. Updates run in both phases unless
/// `random_exploration` is set, in which case they start with training.
struct Schedule {
  std::int64_t default_steps = 0;      // executes the default (equal) partition
  std::int64_t exploration_steps = 0;  // includes default_steps
  std::int64_t training_steps = 0;
  double noise_start = 0.3;
  double noise_end = 0.05;
  bool random_exploration = false;

  Phase phase_at(std::int64_t local_step) const;
  double noise_at(std::int64_t local_step) const;
};

struct Controller {
  enum class Kind { Baseline, Fixed, Agent };

  Kind kind = Kind::Baseline;
  PartitionAction fixed;         // Kind::Fixed
  Td3Agent* agent = nullptr;     // Kind::Agent, not owned
  Schedule schedule;             // Kind::Agent with learn == true
  bool learn = false;
  std::int64_t local_step = 0;
  bool diverged = false;
  std::string error;

  static Controller baseline() { return {}; }
  static Controller fixed_action(PartitionAction a) {
    Controller c;
    c.kind = Kind::Fixed;
    c.fixed = std::move(a);
    return c;
  }
  /// Greedy policy, no learning.
  static Controller frozen(Td3Agent& agent) {
    Controller c;
    c.kind = Kind::Agent;
    c.agent = &agent;
    return c;
  }
  static Controller learner(Td3Agent& agent, const Schedule& schedule) {
    Controller c;
    c.kind = Kind::Agent;
    c.agent = &agent;
    c.schedule = schedule;
    c.learn = true;
    return c;
  }
};

/// Outcome of one synchronised step.
struct TraceStep {
  std::int64_t t = 0;
  std::vector<std::vector<SliceMetrics>> per_cell;
  std::vector<PartitionAction> actions;
  std::vector<double> rewards;
  std::vector<Phase> phases;  // phase each cell's controller was in
};

class Coordinator {
 public:
  Coordinator(Scenario scenario, std::uint64_t env_seed);

  void set_controller(int cell_index, Controller c);
  Controller& controller(int cell_index) { return controllers_.at(static_cast<std::size_t>(cell_index)); }

  /// One network step: act, step the environment, store transitions and run
  /// one TD3 update for every learner in its training phase. A learner whose
  /// update diverges is marked and continues greedily; the others proceed.
  TraceStep advance();

  /// Worker threads for the per-step TD3 updates. Agents own their random
  /// streams, so results do not depend on the thread count.
  void set_threads(int threads) { threads_ = threads < 1 ? 1 : threads; }

  const NetworkState& state() const { return state_; }
  const Scenario& scenario() const { return scenario_; }
  std::uint64_t env_seed() const { return seed_; }

 private:
  PartitionAction act(Controller& c, int cell_index, const StateVector& obs, Phase& phase);

  Scenario scenario_;
  std::uint64_t seed_;
  NetworkState state_;
  std::vector<Controller> controllers_;
  int threads_ = 1;
};

}  // namespace netslice::td3
