#include "netslice/coordinator.hpp"

#include <algorithm>
#include <thread>

namespace netslice::td3 {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Default: return "default";
    case Phase::Exploration: return "exploration";
    case Phase::Training: return "training";
    case Phase::Evaluation: return "evaluation";
  }
  return "?";
}

Phase Schedule::phase_at(std::int64_t s) const {
  if (s < default_steps) return Phase::Default;
  if (s < std::max(exploration_steps, default_steps)) return Phase::Exploration;
  if (s < std::max(exploration_steps, default_steps) + training_steps) return Phase::Training;
  return Phase::Evaluation;
}

double Schedule::noise_at(std::int64_t s) const {
  const std::int64_t span = std::max(exploration_steps, default_steps) - default_steps;
  if (span <= 1) return s < default_steps + span ? noise_start : noise_end;
  const double frac = std::clamp(static_cast<double>(s - default_steps) / static_cast<double>(span - 1), 0.0, 1.0);
  return noise_start + (noise_end - noise_start) * frac;
}

Coordinator::Coordinator(Scenario scenario, std::uint64_t env_seed)
    : scenario_(std::move(scenario)), seed_(env_seed), state_(init_network(scenario_, env_seed)) {
  controllers_.resize(static_cast<std::size_t>(scenario_.cell_count()));
}

void Coordinator::set_controller(int cell_index, Controller c) {
  if (c.kind == Controller::Kind::Agent) {
    if (!c.agent) throw ConfigError("agent controller without an agent");
    if (c.agent->config.action_dim != scenario_.slices || c.agent->config.state_dim != 4 * scenario_.slices)
      throw IncompatibleArchitectureError("agent dimensions do not match the scenario");
  }
  if (c.kind == Controller::Kind::Fixed && c.fixed.size() != scenario_.slices)
    throw ActionError("fixed action has the wrong number of slices");
  controllers_.at(static_cast<std::size_t>(cell_index)) = std::move(c);
}

PartitionAction Coordinator::act(Controller& c, int k, const StateVector& obs, Phase& phase) {
  switch (c.kind) {
    case Controller::Kind::Baseline: {
      phase = Phase::Evaluation;
      const auto traffic = slice_traffic(scenario_, seed_, k, state_.step + 1);
      return baseline_action(traffic.demands);
    }
    case Controller::Kind::Fixed:
      phase = Phase::Evaluation;
      return c.fixed;
    case Controller::Kind::Agent: break;
  }
  auto& agent = *c.agent;
  phase = c.learn && !c.diverged ? c.schedule.phase_at(c.local_step) : Phase::Evaluation;
  switch (phase) {
    case Phase::Default: return PartitionAction::equal(scenario_.slices);
    case Phase::Exploration:
      if (c.schedule.random_exploration) return random_action(scenario_.slices, agent.rng);
      return select_action(agent, obs, true, agent.rng, c.schedule.noise_at(c.local_step));
    case Phase::Training: return select_action(agent, obs, true, agent.rng, c.schedule.noise_at(c.local_step));
    case Phase::Evaluation: return select_action(agent, obs, false, agent.rng);
  }
  return PartitionAction::equal(scenario_.slices);
}

TraceStep Coordinator::advance() {
  const int k_cells = scenario_.cell_count();
  std::vector<StateVector> obs(static_cast<std::size_t>(k_cells));
  for (int k = 0; k < k_cells; ++k)
    if (controllers_[static_cast<std::size_t>(k)].kind == Controller::Kind::Agent)
      obs[static_cast<std::size_t>(k)] = observe(state_, scenario_, k);

  TraceStep out;
  out.actions.reserve(static_cast<std::size_t>(k_cells));
  out.phases.resize(static_cast<std::size_t>(k_cells));
  for (int k = 0; k < k_cells; ++k)
    out.actions.push_back(act(controllers_[static_cast<std::size_t>(k)], k, obs[static_cast<std::size_t>(k)],
                              out.phases[static_cast<std::size_t>(k)]));

  auto result = step(state_, out.actions, scenario_);
  state_ = std::move(result.state);
  out.t = state_.step;
  out.per_cell = state_.per_cell;
  out.rewards = std::move(result.rewards);

  std::vector<int> to_train;
  for (int k = 0; k < k_cells; ++k) {
    auto& c = controllers_[static_cast<std::size_t>(k)];
    if (c.kind != Controller::Kind::Agent || !c.learn) continue;
    const Phase phase = out.phases[static_cast<std::size_t>(k)];
    ++c.local_step;
    if (phase == Phase::Evaluation) continue;
    auto& agent = *c.agent;
    ++agent.env_steps;
    agent.buffer.push(Transition{obs[static_cast<std::size_t>(k)], out.actions[static_cast<std::size_t>(k)],
                                 out.rewards[static_cast<std::size_t>(k)], observe(state_, scenario_, k),
                                 agent.cell_id});
    const bool updates = phase == Phase::Training || (phase == Phase::Exploration && !c.schedule.random_exploration);
    if (updates && agent.buffer.size() >= static_cast<std::size_t>(agent.config.batch_size)) to_train.push_back(k);
  }

  auto train = [this](int k) {
    auto& c = controllers_[static_cast<std::size_t>(k)];
    try {
      train_step(*c.agent);
    } catch (const NumericError& e) {
      c.diverged = true;
      c.error = e.what();
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads_), to_train.size());
  if (workers <= 1) {
    for (int k : to_train) train(k);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < to_train.size(); i += workers) train(to_train[i]);
      });
  }
  return out;
}

}  // namespace netslice::td3
