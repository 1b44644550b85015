#include "netslice/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace netslice::transfer {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Model: return "model";
    case Strategy::Feature: return "feature";
    case Strategy::Instance: return "instance";
    case Strategy::Integrated: return "integrated";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "model") return Strategy::Model;
  if (s == "feature") return Strategy::Feature;
  if (s == "instance") return Strategy::Instance;
  if (s == "integrated") return Strategy::Integrated;
  throw ConfigError("unknown transfer strategy '" + s + "'");
}

void TransferPlan::validate() const {
  if (!(instance_fraction >= 0.0 && instance_fraction <= 1.0))
    throw DomainError("instance_fraction must lie in [0, 1]");
  if (fine_tune_steps < 0) throw DomainError("fine_tune_steps must be non-negative");
}

namespace {

void check_compatible(const td3::Td3Agent& a, const td3::Td3Agent& b) {
  const auto same = [](const td3::Net& x, const td3::Net& y) { return x.same_shape(y); };
  if (!same(a.actor, b.actor) || !same(a.critic1, b.critic1) || !same(a.critic2, b.critic2) ||
      !same(a.actor_target, b.actor_target) || !same(a.critic1_target, b.critic1_target) ||
      !same(a.critic2_target, b.critic2_target))
    throw IncompatibleArchitectureError("source and target network shapes differ");
  for (std::size_t i = 0; i < a.actor.layers().size(); ++i)
    if (a.actor.layer(i).activation != b.actor.layer(i).activation)
      throw IncompatibleArchitectureError("source and target activations differ");
}

void copy_hyper(const td3::Td3Agent& source, td3::Td3Agent& target) {
  target.config.gamma = source.config.gamma;
  target.config.tau = source.config.tau;
}

td3::Net partial_copy(const td3::Net& source, const td3::Net& fresh, int frozen) {
  auto layers = fresh.layers();
  for (int i = 0; i < frozen; ++i) {
    layers[static_cast<std::size_t>(i)] = source.layer(static_cast<std::size_t>(i));
    layers[static_cast<std::size_t>(i)].trainable = false;
  }
  return td3::Net(std::move(layers));
}

}  // namespace

void model_transfer(const td3::Td3Agent& source, td3::Td3Agent& target, bool reset_optimizer) {
  check_compatible(source, target);
  target.actor = source.actor;
  target.critic1 = source.critic1;
  target.critic2 = source.critic2;
  target.actor_target = source.actor_target;
  target.critic1_target = source.critic1_target;
  target.critic2_target = source.critic2_target;
  if (reset_optimizer) {
    target.reset_optimizers();
  } else {
    target.actor_opt = source.actor_opt;
    target.critic1_opt = source.critic1_opt;
    target.critic2_opt = source.critic2_opt;
  }
  copy_hyper(source, target);
  target.train_calls = 0;
  target.env_steps = 0;
}

std::size_t transfer_count(double fraction, std::size_t n) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("instance fraction must lie in [0, 1]");
  const double v = fraction * static_cast<double>(n);
  const double r = std::round(v);
  const double k = std::abs(v - r) <= 1e-9 * std::max(1.0, v) ? r : std::ceil(v);
  return std::min(n, static_cast<std::size_t>(k));
}

td3::ReplayBuffer instance_transfer(std::span<const td3::Transition> source, int source_id,
                                    const td3::ReplayBuffer& target, double fraction, std::uint64_t seed) {
  const std::size_t k = transfer_count(fraction, source.size());
  td3::ReplayBuffer merged = target;
  if (k == 0) return merged;

  std::vector<std::size_t> idx(source.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  td3::Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) {
    auto t = source[i];
    t.origin = source_id;
    merged.push(std::move(t));
  }
  return merged;
}

void feature_transfer(const td3::Td3Agent& source, td3::Td3Agent& target, int frozen_layers, std::uint64_t seed) {
  check_compatible(source, target);
  if (frozen_layers <= 0 || frozen_layers >= static_cast<int>(source.actor.depth()))
    throw DomainError("frozen_layers must satisfy 0 < k < actor depth");
  const td3::Td3Agent fresh(target.cell_id, target.config, seed);
  target.actor = partial_copy(source.actor, fresh.actor, frozen_layers);
  target.critic1 = partial_copy(source.critic1, fresh.critic1, frozen_layers);
  target.critic2 = partial_copy(source.critic2, fresh.critic2, frozen_layers);
  target.actor_target = target.actor;
  target.critic1_target = target.critic1;
  target.critic2_target = target.critic2;
  target.reset_optimizers();
  copy_hyper(source, target);
  target.train_calls = 0;
  target.env_steps = 0;
}

void integrated_transfer(const td3::Td3Agent& source, std::span<const td3::Transition> source_transitions,
                         td3::Td3Agent& target, const TransferPlan& plan) {
  plan.validate();
  model_transfer(source, target, plan.reset_optimizer);
  const auto skip = std::min(plan.skip_leading, source_transitions.size());
  target.buffer = instance_transfer(source_transitions.subspan(skip), source.cell_id, target.buffer,
                                    plan.instance_fraction, plan.seed);
}

void apply_plan(const td3::Td3Agent& source, std::span<const td3::Transition> source_transitions,
                td3::Td3Agent& target, const TransferPlan& plan) {
  plan.validate();
  const auto skip = std::min(plan.skip_leading, source_transitions.size());
  switch (plan.strategy) {
    case Strategy::Model: model_transfer(source, target, plan.reset_optimizer); break;
    case Strategy::Feature: feature_transfer(source, target, plan.frozen_layers, plan.seed); break;
    case Strategy::Instance:
      check_compatible(source, target);
      target.buffer = instance_transfer(source_transitions.subspan(skip), source.cell_id, target.buffer,
                                        plan.instance_fraction, plan.seed);
      break;
    case Strategy::Integrated: integrated_transfer(source, source_transitions, target, plan); break;
  }
}

FineTuneResult fine_tune(td3::Td3Agent& target, const TargetSlot& slot, std::int64_t steps, double noise) {
  FineTuneResult out;
  if (steps <= 0) return out;
  td3::Coordinator coord(slot.scenario, slot.env_seed);
  for (int k = 0; k < slot.scenario.cell_count(); ++k)
    if (k != slot.target_index && static_cast<std::size_t>(k) < slot.peers.size())
      coord.set_controller(k, slot.peers[static_cast<std::size_t>(k)]);
  td3::Schedule schedule;
  schedule.training_steps = steps;
  schedule.noise_start = noise;
  schedule.noise_end = noise;
  coord.set_controller(slot.target_index, td3::Controller::learner(target, schedule));

  out.rewards.reserve(static_cast<std::size_t>(steps));
  out.trace.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) {
    auto step = coord.advance();
    out.rewards.push_back(step.rewards[static_cast<std::size_t>(slot.target_index)]);
    out.trace.push_back(std::move(step));
  }
  const auto& c = coord.controller(slot.target_index);
  out.diverged = c.diverged;
  out.error = c.error;
  return out;
}

}  // namespace netslice::transfer
