#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "netslice/env.hpp"
#include "netslice/tinynn.hpp"

namespace netslice::td3 {

using Net = nn::Mlp<double>;
using Adam = nn::AdamState<double>;
using nn::Rng;

/// [throughput (N), load (N), UE count (N), mean neighbour load (N)], normalised.
using StateVector = Eigen::VectorXd;

struct Message {
  int sender = 0;
  Eigen::VectorXd per_slice_load;
};

struct Normalizers {
  double throughput = 1.0;  // Mbit/s
  double ues = 1.0;
};

/// Mean per-slice load over the received messages; zeros when there are none.
Eigen::VectorXd extract_neighbor_features(std::span<const Message> messages, int slices);

StateVector assemble_state(std::span<const SliceMetrics> metrics, const Eigen::VectorXd& neighbor_features,
                           const Normalizers& norm);

/// Throughput by the cell's largest slice target, UEs by its per-slice maximum.
Normalizers cell_normalizers(const CellConfig& cell);

/// Local observation of cell `cell_index` after the step that produced `state`,
/// including the messages of its neighbours.
StateVector observe(const NetworkState& state, const Scenario& scenario, int cell_index);

struct Transition {
  StateVector state;
  PartitionAction action;
  double reward = 0.0;
  StateVector next_state;
  int origin = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Bounded FIFO replay memory. Transitions whose origin differs from the
/// owner (transferred instances) are evicted first once the owner has
/// contributed at least `protect_after` transitions of its own; otherwise
/// eviction is oldest-first.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, int owner, std::size_t protect_after = 32);

  void push(Transition t);
  std::size_t size() const { return own_.size() + foreign_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size() == 0; }
  int owner() const { return owner_; }
  std::size_t own_count() const { return own_.size(); }
  std::size_t foreign_count() const { return foreign_.size(); }
  std::size_t protect_after() const { return protect_after_; }

  /// Uniform sampling with replacement.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const;
  /// All transitions, oldest first.
  std::vector<Transition> snapshot() const;
  const Transition& at(std::size_t i) const;

 private:
  struct Entry {
    std::uint64_t seq;
    Transition t;
  };
  void evict_one();

  std::size_t capacity_ = 20000;
  int owner_ = 0;
  std::size_t protect_after_ = 32;
  std::uint64_t next_seq_ = 0;
  std::deque<Entry> own_;
  std::deque<Entry> foreign_;
};

/// Binary buffer export: "NSRB" magic, version, dimensions, then transitions
/// in insertion order with a fixed field order.
void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path);
std::vector<Transition> load_transitions(const std::filesystem::path& path);

struct Td3Config {
  int state_dim = 16;
  int action_dim = 4;
  std::vector<int> actor_hidden{48, 24};
  std::vector<int> critic_hidden{64, 24};
  double actor_lr = 5e-4;
  double critic_lr = 1e-3;
  double gamma = 0.1;
  double tau = 0.005;
  int batch_size = 32;
  int policy_delay = 2;
  double target_noise = 0.1;       // logit space
  double target_noise_clip = 0.2;
  /// Weight of the mean squared centred actor logit in the actor loss; keeps
  /// the softmax head away from saturated corners.
  double logit_penalty = 0.01;
  std::size_t buffer_capacity = 20000;
};

struct TrainStats {
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  std::optional<double> actor_loss;
};

class Td3Agent {
 public:
  Td3Agent() = default;
  Td3Agent(int cell_id, const Td3Config& config, std::uint64_t seed);

  int cell_id = 0;
  Td3Config config;
  Net actor, critic1, critic2;
  Net actor_target, critic1_target, critic2_target;
  Adam actor_opt, critic1_opt, critic2_opt;
  ReplayBuffer buffer;
  std::int64_t train_calls = 0;
  std::int64_t env_steps = 0;
  Rng rng;

  /// Re-initialises every optimizer state to zero moments.
  void reset_optimizers();
  bool shapes_consistent() const;
};

/// Greedy softmax policy, or softmax of logits perturbed by N(0, noise_sigma)
/// when exploring. Always simplex-valid.
PartitionAction select_action(const Td3Agent& agent, const StateVector& state, bool explore, Rng& rng,
                              double noise_sigma = 0.3);

/// Uniform draw from the simplex (flat Dirichlet).
PartitionAction random_action(int slices, Rng& rng);

/// Bellman targets r + gamma * min(Q1', Q2') on smoothed target-policy
/// actions. Constants with respect to the critic update.
Eigen::VectorXd critic_targets(const Td3Agent& agent, std::span<const Transition* const> batch, Rng& rng);

/// One TD3 update on `batch`. Critics every call; actor and soft target
/// updates every `policy_delay`-th call. Non-finite losses throw NumericError
/// and leave the agent untouched.
TrainStats train_step(Td3Agent& agent, std::span<const Transition* const> batch);
/// Samples a batch from the agent's own buffer.
TrainStats train_step(Td3Agent& agent);

/// target <- tau * online + (1 - tau) * target.
void soft_update(Net& target, const Net& online, double tau);

void save_agent(const Td3Agent& agent, const std::filesystem::path& path);
Td3Agent load_agent(const std::filesystem::path& path);

}  // namespace netslice::td3
