#pragma once

// Knowledge transfer from a pretrained source agent to a target agent:
// parameter copy (model), replay-buffer merge (instance), frozen lower layers
// (feature) and the model + instance combination used for fine-tuning.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "netslice/coordinator.hpp"
#include "netslice/td3.hpp"

namespace netslice::transfer {

enum class Strategy { Model, Feature, Instance, Integrated };
const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

struct TransferPlan {
  int source = 0;
  int target = 0;
  Strategy strategy = Strategy::Integrated;
  double instance_fraction = 1.0;
  int frozen_layers = 1;          // feature strategy only
  std::int64_t fine_tune_steps = 4000;
  bool reset_optimizer = true;
  /// Leading source transitions skipped before instance subsampling
  /// (default-action and exploration-phase experience).
  std::size_t skip_leading = 0;
  double fine_tune_noise = 0.1;
  std::uint64_t seed = 0;

  /// Throws DomainError when the fraction is outside [0, 1].
  void validate() const;
};

/// Copies all six networks from `source` into `target`; the target keeps its
/// cell id and buffer, its step counters restart at zero and its optimizer
/// moments are reset (or copied when `reset_optimizer` is false).
void model_transfer(const td3::Td3Agent& source, td3::Td3Agent& target, bool reset_optimizer = true);

/// ceil(fraction * n), exact for fractions that land on an integer.
std::size_t transfer_count(double fraction, std::size_t n);

/// Appends a uniform subsample (without replacement, original order kept) of
/// transfer_count(fraction, |source|) transitions tagged with `source_id` to
/// a copy of `target`.
td3::ReplayBuffer instance_transfer(std::span<const td3::Transition> source, int source_id,
                                    const td3::ReplayBuffer& target, double fraction, std::uint64_t seed);

/// Copies the lowest `frozen_layers` layers of the actor and both critics and
/// marks them non-trainable; the remaining layers are re-initialised. Target
/// networks mirror the online networks and optimizers are reset.
void feature_transfer(const td3::Td3Agent& source, td3::Td3Agent& target, int frozen_layers, std::uint64_t seed);

/// Applies the plan's strategy to `target`. `source_transitions` is the
/// source agent's exported buffer, oldest first.
void apply_plan(const td3::Td3Agent& source, std::span<const td3::Transition> source_transitions,
                td3::Td3Agent& target, const TransferPlan& plan);

/// Model transfer followed by instance transfer.
void integrated_transfer(const td3::Td3Agent& source, std::span<const td3::Transition> source_transitions,
                         td3::Td3Agent& target, const TransferPlan& plan);

/// The target's slot in a running network; every other cell is driven by its
/// controller in `peers` (indexed by cell, the target's entry is ignored).
struct TargetSlot {
  Scenario scenario;
  std::uint64_t env_seed = 0;
  int target_index = 0;
  std::vector<td3::Controller> peers;
};

struct FineTuneResult {
  std::vector<double> rewards;  // target reward per step
  std::vector<td3::TraceStep> trace;
  bool diverged = false;
  std::string error;
};

/// Trains the target from its current policy for `steps` network steps with
/// constant exploration noise and no random-exploration phase.
FineTuneResult fine_tune(td3::Td3Agent& target, const TargetSlot& slot, std::int64_t steps, double noise = 0.1);

}  // namespace netslice::transfer
