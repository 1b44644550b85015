#include "netslice/td3.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace netslice::td3 {

Eigen::VectorXd extract_neighbor_features(std::span<const Message> messages, int slices) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(slices);
  if (messages.empty()) return c;
  for (const auto& m : messages) {
    if (m.per_slice_load.size() != slices)
      throw DimensionError("message from cell " + std::to_string(m.sender) + " has " +
                           std::to_string(m.per_slice_load.size()) + " loads, expected " +
                           std::to_string(slices));
    c += m.per_slice_load;
  }
  return c / static_cast<double>(messages.size());
}

StateVector assemble_state(std::span<const SliceMetrics> metrics, const Eigen::VectorXd& neighbor_features,
                           const Normalizers& norm) {
  const auto n = static_cast<Eigen::Index>(metrics.size());
  if (neighbor_features.size() != n) throw DimensionError("assemble_state: neighbour features must have N entries");
  if (!(norm.throughput > 0.0) || !(norm.ues > 0.0)) throw DomainError("assemble_state: normalizers must be positive");
  StateVector s(4 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& m = metrics[static_cast<std::size_t>(i)];
    s(i) = m.throughput / norm.throughput;
    s(n + i) = m.load;
    s(2 * n + i) = m.ue_count / norm.ues;
  }
  s.tail(n) = neighbor_features;
  return s;
}

Normalizers cell_normalizers(const CellConfig& cell) {
  Normalizers norm;
  norm.throughput = 0.0;
  for (const auto& r : cell.requirements) norm.throughput = std::max(norm.throughput, r.throughput_target);
  norm.ues = cell.max_ues_per_slice;
  return norm;
}

StateVector observe(const NetworkState& state, const Scenario& scenario, int cell_index) {
  const auto& cell = scenario.cells[static_cast<std::size_t>(cell_index)];
  std::vector<Message> messages;
  messages.reserve(cell.neighbor_ids.size());
  for (int nb : cell.neighbor_ids) {
    const auto& metrics = state.per_cell[static_cast<std::size_t>(scenario.index_of(nb))];
    Message m{nb, Eigen::VectorXd(scenario.slices)};
    for (int n = 0; n < scenario.slices; ++n) m.per_slice_load(n) = metrics[static_cast<std::size_t>(n)].load;
    messages.push_back(std::move(m));
  }
  return assemble_state(state.per_cell[static_cast<std::size_t>(cell_index)],
                        extract_neighbor_features(messages, scenario.slices), cell_normalizers(cell));
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, int owner, std::size_t protect_after)
    : capacity_(capacity), owner_(owner), protect_after_(protect_after) {
  if (capacity_ == 0) throw DomainError("replay buffer capacity must be positive");
}

void ReplayBuffer::evict_one() {
  const bool prefer_foreign = !foreign_.empty() && own_.size() >= protect_after_;
  if (prefer_foreign || own_.empty()) {
    foreign_.pop_front();
  } else if (foreign_.empty() || own_.front().seq < foreign_.front().seq) {
    own_.pop_front();
  } else {
    foreign_.pop_front();
  }
}

void ReplayBuffer::push(Transition t) {
  while (size() >= capacity_) evict_one();
  auto& target = t.origin == owner_ ? own_ : foreign_;
  target.push_back(Entry{next_seq_++, std::move(t)});
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i < own_.size()) return own_[i].t;
  return foreign_.at(i - own_.size()).t;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (empty()) throw EmptySetError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(&at(pick(rng)));
  return out;
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::vector<Transition> out;
  out.reserve(size());
  std::size_t i = 0, j = 0;
  while (i < own_.size() || j < foreign_.size()) {
    if (j >= foreign_.size() || (i < own_.size() && own_[i].seq < foreign_[j].seq))
      out.push_back(own_[i++].t);
    else
      out.push_back(foreign_[j++].t);
  }
  return out;
}

namespace {
constexpr char kBufferMagic[4] = {'N', 'S', 'R', 'B'};
constexpr std::uint32_t kBufferVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("buffer file truncated");
  return v;
}
}  // namespace

void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const auto all = buffer.snapshot();
  const std::uint32_t sdim = all.empty() ? 0 : static_cast<std::uint32_t>(all.front().state.size());
  const std::uint32_t adim = all.empty() ? 0 : static_cast<std::uint32_t>(all.front().action.size());
  os.write(kBufferMagic, 4);
  put(os, kBufferVersion);
  put(os, sdim);
  put(os, adim);
  put(os, static_cast<std::uint64_t>(all.size()));
  for (const auto& t : all) {
    for (Eigen::Index i = 0; i < sdim; ++i) put(os, t.state(i));
    for (Eigen::Index i = 0; i < adim; ++i) put(os, t.action[i]);
    put(os, t.reward);
    for (Eigen::Index i = 0; i < sdim; ++i) put(os, t.next_state(i));
    put(os, static_cast<std::int32_t>(t.origin));
  }
}

std::vector<Transition> load_transitions(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kBufferMagic, 4) != 0)
    throw IoError(path.string() + " is not a replay buffer export");
  if (get<std::uint32_t>(is) != kBufferVersion) throw IoError("unsupported buffer version in " + path.string());
  const auto sdim = get<std::uint32_t>(is);
  const auto adim = get<std::uint32_t>(is);
  const auto count = get<std::uint64_t>(is);
  std::vector<Transition> out;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    Transition t;
    t.state.resize(sdim);
    t.next_state.resize(sdim);
    Eigen::VectorXd a(adim);
    for (Eigen::Index i = 0; i < sdim; ++i) t.state(i) = get<double>(is);
    for (Eigen::Index i = 0; i < adim; ++i) a(i) = get<double>(is);
    t.action = PartitionAction(std::move(a));
    t.reward = get<double>(is);
    for (Eigen::Index i = 0; i < sdim; ++i) t.next_state(i) = get<double>(is);
    t.origin = get<std::int32_t>(is);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Agent

namespace {
std::vector<int> widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}
}  // namespace

Td3Agent::Td3Agent(int id, const Td3Config& cfg, std::uint64_t seed)
    : cell_id(id), config(cfg), rng(seed) {
  if (cfg.state_dim < 1 || cfg.action_dim < 1) throw DimensionError("agent dimensions must be positive");
  if (cfg.batch_size < 1 || cfg.policy_delay < 1) throw DomainError("batch size and policy delay must be >= 1");
  actor = Net(widths(cfg.state_dim, cfg.actor_hidden, cfg.action_dim), nn::Activation::Relu,
              nn::Activation::Softmax, rng);
  critic1 = Net(widths(cfg.state_dim + cfg.action_dim, cfg.critic_hidden, 1), nn::Activation::Relu,
                nn::Activation::Identity, rng);
  critic2 = Net(widths(cfg.state_dim + cfg.action_dim, cfg.critic_hidden, 1), nn::Activation::Relu,
                nn::Activation::Identity, rng);
  actor_target = actor;
  critic1_target = critic1;
  critic2_target = critic2;
  reset_optimizers();
  buffer = ReplayBuffer(cfg.buffer_capacity, id, static_cast<std::size_t>(cfg.batch_size));
}

void Td3Agent::reset_optimizers() {
  actor_opt = Adam(actor);
  critic1_opt = Adam(critic1);
  critic2_opt = Adam(critic2);
}

bool Td3Agent::shapes_consistent() const {
  return actor.same_shape(actor_target) && critic1.same_shape(critic1_target) &&
         critic2.same_shape(critic2_target) && actor_opt.mirrors(actor) && critic1_opt.mirrors(critic1) &&
         critic2_opt.mirrors(critic2);
}

PartitionAction select_action(const Td3Agent& agent, const StateVector& state, bool explore, Rng& rng,
                              double noise_sigma) {
  const auto cache = agent.actor.forward(state);
  if (!explore) return PartitionAction(cache.output().col(0));
  Eigen::VectorXd logits = cache.head_pre_activation().col(0);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) += noise(rng);
  return PartitionAction(nn::softmax_columns(logits).col(0));
}

PartitionAction random_action(int slices, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  Eigen::VectorXd x(slices);
  for (int i = 0; i < slices; ++i) x(i) = expo(rng);
  x /= x.sum();
  Eigen::Index arg = 0;
  x.maxCoeff(&arg);
  x(arg) += 1.0 - x.sum();
  return PartitionAction(std::move(x));
}

namespace {

struct BatchMatrices {
  Eigen::MatrixXd states, actions, next_states;
  Eigen::VectorXd rewards;
};

BatchMatrices stack(std::span<const Transition* const> batch, int sdim, int adim) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  BatchMatrices m{Eigen::MatrixXd(sdim, b), Eigen::MatrixXd(adim, b), Eigen::MatrixXd(sdim, b),
                  Eigen::VectorXd(b)};
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& t = *batch[static_cast<std::size_t>(j)];
    if (t.state.size() != sdim || t.next_state.size() != sdim || t.action.size() != adim)
      throw DimensionError("transition dimensions do not match the agent");
    m.states.col(j) = t.state;
    m.actions.col(j) = t.action.shares();
    m.next_states.col(j) = t.next_state;
    m.rewards(j) = t.reward;
  }
  return m;
}

Eigen::MatrixXd concat_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

Eigen::VectorXd targets_from(const Td3Agent& agent, const Eigen::MatrixXd& next_states,
                             const Eigen::VectorXd& rewards, Rng& rng) {
  const auto& cfg = agent.config;
  Eigen::MatrixXd logits = agent.actor_target.forward(next_states).head_pre_activation();
  if (cfg.target_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.target_noise);
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      for (Eigen::Index i = 0; i < logits.rows(); ++i)
        logits(i, j) += std::clamp(noise(rng), -cfg.target_noise_clip, cfg.target_noise_clip);
  }
  const Eigen::MatrixXd next_actions = nn::softmax_columns(logits);
  const Eigen::MatrixXd critic_in = concat_rows(next_states, next_actions);
  const Eigen::RowVectorXd q1 = agent.critic1_target.forward(critic_in).output().row(0);
  const Eigen::RowVectorXd q2 = agent.critic2_target.forward(critic_in).output().row(0);
  return rewards + cfg.gamma * q1.cwiseMin(q2).transpose();
}

}  // namespace

Eigen::VectorXd critic_targets(const Td3Agent& agent, std::span<const Transition* const> batch, Rng& rng) {
  const auto m = stack(batch, agent.config.state_dim, agent.config.action_dim);
  return targets_from(agent, m.next_states, m.rewards, rng);
}

void soft_update(Net& target, const Net& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("soft_update: tau must lie in [0,1]");
  if (!target.same_shape(online)) throw DimensionError("soft_update: shape mismatch");
  auto& layers = target.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& src = online.layer(i);
    layers[i].weight = tau * src.weight + (1.0 - tau) * layers[i].weight;
    layers[i].bias = tau * src.bias + (1.0 - tau) * layers[i].bias;
  }
}

TrainStats train_step(Td3Agent& agent, std::span<const Transition* const> batch) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  const auto& cfg = agent.config;
  const auto m = stack(batch, cfg.state_dim, cfg.action_dim);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  const Eigen::VectorXd y = targets_from(agent, m.next_states, m.rewards, agent.rng);
  const Eigen::MatrixXd critic_in = concat_rows(m.states, m.actions);

  auto critic_pass = [&](const Net& critic, double& loss) {
    const auto cache = critic.forward(critic_in);
    const Eigen::RowVectorXd diff = cache.output().row(0) - y.transpose();
    loss = diff.squaredNorm() * inv_b;
    const Eigen::MatrixXd grad = 2.0 * inv_b * diff;
    return critic.backward(cache, grad);
  };

  TrainStats stats;
  auto g1 = critic_pass(agent.critic1, stats.critic1_loss);
  auto g2 = critic_pass(agent.critic2, stats.critic2_loss);
  if (!std::isfinite(stats.critic1_loss) || !std::isfinite(stats.critic2_loss))
    throw NumericError("non-finite critic loss in agent " + std::to_string(agent.cell_id));

  const bool actor_turn = (agent.train_calls + 1) % cfg.policy_delay == 0;
  // Critics are updated before the actor; keep them so a failed actor pass
  // can roll back.
  struct CriticBackup {
    Net c1, c2;
    Adam o1, o2;
  };
  std::optional<CriticBackup> backup;
  if (actor_turn) backup = CriticBackup{agent.critic1, agent.critic2, agent.critic1_opt, agent.critic2_opt};

  nn::adam_step(agent.critic1_opt, agent.critic1, g1, cfg.critic_lr);
  nn::adam_step(agent.critic2_opt, agent.critic2, g2, cfg.critic_lr);

  if (actor_turn) {
    try {
      const auto actor_cache = agent.actor.forward(m.states);
      const auto q_cache = agent.critic1.forward(concat_rows(m.states, actor_cache.output()));
      const Eigen::MatrixXd& logits = actor_cache.head_pre_activation();
      const Eigen::MatrixXd centred = logits.rowwise() - logits.colwise().mean();
      const double actor_loss =
          -q_cache.output().sum() * inv_b + cfg.logit_penalty * centred.squaredNorm() * inv_b;
      if (!std::isfinite(actor_loss))
        throw NumericError("non-finite actor loss in agent " + std::to_string(agent.cell_id));
      const Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(1, m.states.cols(), -inv_b);
      const auto q_grads = agent.critic1.backward(q_cache, dq);
      const Eigen::MatrixXd da = q_grads.input.bottomRows(cfg.action_dim);
      const auto a_grads = cfg.logit_penalty > 0.0
                               ? agent.actor.backward(actor_cache, da, (2.0 * cfg.logit_penalty * inv_b) * centred)
                               : agent.actor.backward(actor_cache, da);
      nn::adam_step(agent.actor_opt, agent.actor, a_grads, cfg.actor_lr);
      stats.actor_loss = actor_loss;
    } catch (const NumericError&) {
      agent.critic1 = std::move(backup->c1);
      agent.critic2 = std::move(backup->c2);
      agent.critic1_opt = std::move(backup->o1);
      agent.critic2_opt = std::move(backup->o2);
      throw;
    }
    soft_update(agent.actor_target, agent.actor, cfg.tau);
    soft_update(agent.critic1_target, agent.critic1, cfg.tau);
    soft_update(agent.critic2_target, agent.critic2, cfg.tau);
  }
  ++agent.train_calls;
  return stats;
}

TrainStats train_step(Td3Agent& agent) {
  const auto b = static_cast<std::size_t>(agent.config.batch_size);
  if (agent.buffer.size() < b) throw DomainError("train_step: replay buffer holds fewer transitions than a batch");
  const auto batch = agent.buffer.sample(b, agent.rng);
  return train_step(agent, batch);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
nlohmann::json config_json(const Td3Agent& a) {
  const auto& c = a.config;
  return {{"cell_id", a.cell_id},
          {"state_dim", c.state_dim},
          {"action_dim", c.action_dim},
          {"actor_hidden", c.actor_hidden},
          {"critic_hidden", c.critic_hidden},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"batch_size", c.batch_size},
          {"policy_delay", c.policy_delay},
          {"target_noise", c.target_noise},
          {"target_noise_clip", c.target_noise_clip},
          {"logit_penalty", c.logit_penalty},
          {"buffer_capacity", c.buffer_capacity},
          {"train_calls", a.train_calls},
          {"env_steps", a.env_steps}};
}
}  // namespace

void save_agent(const Td3Agent& a, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "netslice.td3 1\n" << config_json(a).dump() << '\n' << a.rng << '\n';
  for (const Net* n : {&a.actor, &a.critic1, &a.critic2, &a.actor_target, &a.critic1_target, &a.critic2_target})
    nn::save(os, *n);
  for (const Adam* o : {&a.actor_opt, &a.critic1_opt, &a.critic2_opt}) nn::save(os, *o);
}

Td3Agent load_agent(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "netslice.td3" || version != 1) throw IoError(path.string() + " is not a TD3 agent checkpoint");
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  Td3Agent a;
  try {
    const auto j = nlohmann::json::parse(line);
    a.cell_id = j.at("cell_id");
    auto& c = a.config;
    c.state_dim = j.at("state_dim");
    c.action_dim = j.at("action_dim");
    c.actor_hidden = j.at("actor_hidden").get<std::vector<int>>();
    c.critic_hidden = j.at("critic_hidden").get<std::vector<int>>();
    c.actor_lr = j.at("actor_lr");
    c.critic_lr = j.at("critic_lr");
    c.gamma = j.at("gamma");
    c.tau = j.at("tau");
    c.batch_size = j.at("batch_size");
    c.policy_delay = j.at("policy_delay");
    c.target_noise = j.at("target_noise");
    c.target_noise_clip = j.at("target_noise_clip");
    c.logit_penalty = j.value("logit_penalty", 0.0);
    c.buffer_capacity = j.at("buffer_capacity");
    a.train_calls = j.at("train_calls");
    a.env_steps = j.at("env_steps");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad agent metadata: " + e.what());
  }
  is >> a.rng;
  a.actor = nn::load_mlp<double>(is);
  a.critic1 = nn::load_mlp<double>(is);
  a.critic2 = nn::load_mlp<double>(is);
  a.actor_target = nn::load_mlp<double>(is);
  a.critic1_target = nn::load_mlp<double>(is);
  a.critic2_target = nn::load_mlp<double>(is);
  a.actor_opt = nn::load_adam<double>(is);
  a.critic1_opt = nn::load_adam<double>(is);
  a.critic2_opt = nn::load_adam<double>(is);
  a.buffer = ReplayBuffer(a.config.buffer_capacity, a.cell_id, static_cast<std::size_t>(a.config.batch_size));
  if (!a.shapes_consistent()) throw IoError(path.string() + ": inconsistent network shapes");
  return a;
}

}  // namespace netslice::td3
