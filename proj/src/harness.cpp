#include "netslice/harness.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "netslice/scenario.hpp"

namespace netslice::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

td3::Schedule ScheduleConfig::agent_schedule() const {
  td3::Schedule s;
  s.default_steps = default_action_steps;
  s.exploration_steps = exploration_steps;
  s.training_steps = training_steps;
  s.noise_start = noise_start;
  s.noise_end = noise_end;
  s.random_exploration = random_exploration;
  return s;
}

std::int64_t ScheduleConfig::madrl_steps() const {
  return std::max(exploration_steps, default_action_steps) + training_steps + evaluation_steps;
}

namespace {

Scenario preset_scenario(const std::string& name) {
  if (name == "three-cell") return three_cell_scenario();
  if (name == "twelve-cell") return twelve_cell_scenario();
  throw ConfigError("unknown scenario preset '" + name + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_agent(const json& j, td3::Td3Config& c) {
  read_opt(j, "actor_hidden", c.actor_hidden);
  read_opt(j, "critic_hidden", c.critic_hidden);
  read_opt(j, "actor_lr", c.actor_lr);
  read_opt(j, "critic_lr", c.critic_lr);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "tau", c.tau);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "policy_delay", c.policy_delay);
  read_opt(j, "target_noise", c.target_noise);
  read_opt(j, "target_noise_clip", c.target_noise_clip);
  read_opt(j, "buffer_capacity", c.buffer_capacity);
  read_opt(j, "logit_penalty", c.logit_penalty);
  if (c.batch_size <= 0 || c.policy_delay <= 0 || c.buffer_capacity == 0)
    throw ConfigError("agent: batch_size, policy_delay and buffer_capacity must be positive");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw ConfigError("agent: gamma must lie in [0, 1]");
  if (!(c.tau >= 0.0 && c.tau <= 1.0)) throw ConfigError("agent: tau must lie in [0, 1]");
}

void parse_similarity(const json& j, SimilarityConfig& c) {
  read_opt(j, "target", c.target);
  read_opt(j, "candidates", c.candidates);
  if (j.contains("vae")) {
    const auto& v = j["vae"];
    read_opt(v, "encoder_hidden", c.vae.encoder_hidden);
    read_opt(v, "latent_dim", c.vae.latent_dim);
    read_opt(v, "decoder_hidden", c.vae.decoder_hidden);
    read_opt(v, "kl_weight", c.vae.kl_weight);
    read_opt(v, "epochs", c.vae.epochs);
    read_opt(v, "batch_size", c.vae.batch_size);
    read_opt(v, "learning_rate", c.vae.learning_rate);
    read_opt(v, "min_samples", c.vae.min_samples);
  }
  if (j.contains("distance")) {
    const auto& d = j["distance"];
    if (d.contains("mode")) c.distance.mode = similarity::parse_mode(d["mode"].get<std::string>());
    read_opt(d, "shared_sigma", c.distance.shared_sigma);
    read_opt(d, "simplified_sigma_limit", c.distance.simplified_sigma_limit);
    read_opt(d, "source_first", c.distance.source_first);
  }
}

void parse_transfer(const json& j, TransferConfig& c) {
  if (j.contains("source")) {
    const auto& s = j["source"];
    c.source = s.is_number_integer() ? std::to_string(s.get<int>()) : s.get<std::string>();
  }
  read_opt(j, "target", c.target);
  if (j.contains("strategy")) c.strategy = transfer::parse_strategy(j["strategy"].get<std::string>());
  read_opt(j, "instance_fraction", c.instance_fraction);
  read_opt(j, "frozen_layers", c.frozen_layers);
  read_opt(j, "fine_tune_noise", c.fine_tune_noise);
  read_opt(j, "reset_optimizer", c.reset_optimizer);
  read_opt(j, "skip_exploration_instances", c.skip_exploration_instances);
  read_opt(j, "scratch_reference", c.scratch_reference);
  if (!(c.instance_fraction >= 0.0 && c.instance_fraction <= 1.0))
    throw ConfigError("transfer: instance_fraction must lie in [0, 1]");
}

}  // namespace

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  c.echo = j;
  try {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    if (!j.contains("scenario")) throw ConfigError("config: missing 'scenario'");
    const auto& js = j["scenario"];
    if (js.is_string()) {
      const fs::path p = base_dir / js.get<std::string>();
      if (!fs::exists(p)) throw ConfigError("config: scenario file not found: " + p.string());
      c.scenario = load_scenario(p);
    } else if (js.is_object() && js.contains("preset")) {
      c.scenario = preset_scenario(js["preset"].get<std::string>());
    } else {
      c.scenario = scenario_from_json(js);
    }

    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      read_opt(s, "default_action_steps", c.schedule.default_action_steps);
      read_opt(s, "exploration_steps", c.schedule.exploration_steps);
      read_opt(s, "training_steps", c.schedule.training_steps);
      read_opt(s, "evaluation_steps", c.schedule.evaluation_steps);
      read_opt(s, "tl_training_steps", c.schedule.tl_training_steps);
      read_opt(s, "noise_start", c.schedule.noise_start);
      read_opt(s, "noise_end", c.schedule.noise_end);
      read_opt(s, "random_exploration", c.schedule.random_exploration);
    }
    const auto& s = c.schedule;
    if (s.default_action_steps < 0 || s.exploration_steps < 0 || s.training_steps < 0 || s.evaluation_steps < 0 ||
        s.tl_training_steps < 0)
      throw ConfigError("schedule: phase lengths must be non-negative");
    if (s.noise_start < 0.0 || s.noise_end < 0.0) throw ConfigError("schedule: noise must be non-negative");

    read_opt(j, "seed", c.seed);
    read_opt(j, "threads", c.threads);
    c.agent.state_dim = 4 * c.scenario.slices;
    c.agent.action_dim = c.scenario.slices;
    if (j.contains("agent")) parse_agent(j["agent"], c.agent);
    if (j.contains("similarity")) parse_similarity(j["similarity"], c.similarity);
    if (j.contains("transfer")) parse_transfer(j["transfer"], c.transfer);
    if (j.contains("evaluate")) read_opt(j["evaluate"], "policy", c.evaluate.policy);

    if (c.similarity.target >= 0) c.scenario.index_of(c.similarity.target);
    for (int id : c.similarity.candidates) c.scenario.index_of(id);
    if (c.transfer.target >= 0) c.scenario.index_of(c.transfer.target);
    const auto& p = c.evaluate.policy;
    if (p != "baseline" && p != "madrl" && p != "tl") throw ConfigError("evaluate: unknown policy '" + p + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

ExperimentConfig preset_config(const std::string& preset) {
  json j;
  j["scenario"] = {{"preset", preset}};
  if (preset == "three-cell") {
    j["similarity"] = {{"target", 3}, {"candidates", {1, 2}}};
    j["transfer"] = {{"target", 3}};
  }
  return config_from_json(j);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : purpose) h = (h ^ ch) * 0x100000001b3ULL;
  return mix(mix(mix(seed) ^ h) ^ index);
}

// ---------------------------------------------------------------------------
// Runs

Trace run_policies(const Scenario& scenario, std::uint64_t env_seed, std::vector<td3::Controller> controllers,
                   std::int64_t steps, int threads) {
  td3::Coordinator coord(scenario, env_seed);
  coord.set_threads(threads);
  for (std::size_t k = 0; k < controllers.size(); ++k) coord.set_controller(static_cast<int>(k), controllers[k]);
  Trace trace;
  trace.reserve(static_cast<std::size_t>(std::max<std::int64_t>(steps, 0)));
  for (std::int64_t s = 0; s < steps; ++s) trace.push_back(coord.advance());
  return trace;
}

Trace run_baseline(const Scenario& scenario, std::uint64_t env_seed, std::int64_t steps) {
  return run_policies(scenario, env_seed,
                      std::vector<td3::Controller>(static_cast<std::size_t>(scenario.cell_count())), steps);
}

MadrlResult run_madrl(const ExperimentConfig& config) {
  const auto& sc = config.scenario;
  MadrlResult r;
  r.agents.reserve(static_cast<std::size_t>(sc.cell_count()));
  for (int k = 0; k < sc.cell_count(); ++k) {
    const int id = sc.cells[static_cast<std::size_t>(k)].cell_id;
    r.agents.emplace_back(id, config.agent, derive_seed(config.seed, "agent", static_cast<std::uint64_t>(id)));
  }
  td3::Coordinator coord(sc, config.seed);
  coord.set_threads(config.threads);
  const auto schedule = config.schedule.agent_schedule();
  for (int k = 0; k < sc.cell_count(); ++k)
    coord.set_controller(k, td3::Controller::learner(r.agents[static_cast<std::size_t>(k)], schedule));
  const auto steps = config.schedule.madrl_steps();
  r.trace.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) r.trace.push_back(coord.advance());
  for (int k = 0; k < sc.cell_count(); ++k)
    if (coord.controller(k).diverged)
      r.diverged[sc.cells[static_cast<std::size_t>(k)].cell_id] = coord.controller(k).error;
  return r;
}

std::vector<similarity::AgentStep> agent_steps(const Trace& trace, const Scenario& scenario, int cell_index) {
  std::vector<similarity::AgentStep> out;
  out.reserve(trace.size());
  NetworkState view;
  for (const auto& st : trace) {
    view.per_cell = st.per_cell;
    similarity::AgentStep a;
    a.t = st.t;
    a.state = td3::observe(view, scenario, cell_index);
    a.action = st.actions[static_cast<std::size_t>(cell_index)];
    a.reward = st.rewards[static_cast<std::size_t>(cell_index)];
    out.push_back(std::move(a));
  }
  return out;
}

SimilarityResult run_similarity(const ExperimentConfig& config, const Trace& trace) {
  const auto& sc = config.scenario;
  const auto& sim = config.similarity;
  std::vector<int> targets, sources;
  if (sim.target >= 0) {
    targets.push_back(sim.target);
    sources = sim.candidates;
    if (sources.empty())
      for (const auto& c : sc.cells)
        if (c.cell_id != sim.target) sources.push_back(c.cell_id);
  } else {
    for (const auto& c : sc.cells) targets.push_back(c.cell_id);
    sources = targets;
  }
  std::vector<int> involved = targets;
  involved.insert(involved.end(), sources.begin(), sources.end());
  std::sort(involved.begin(), involved.end());
  involved.erase(std::unique(involved.begin(), involved.end()), involved.end());

  const auto a_default = PartitionAction::equal(sc.slices);
  std::map<int, std::vector<similarity::DefaultSample>> per_agent;
  std::vector<similarity::DefaultSample> pooled;
  for (int id : involved) {
    const auto steps = agent_steps(trace, sc, sc.index_of(id));
    auto samples = similarity::collect_default_samples(steps, id, a_default);
    pooled.insert(pooled.end(), samples.begin(), samples.end());
    per_agent[id] = std::move(samples);
  }

  auto trained = similarity::vae_train(pooled, sim.vae, derive_seed(config.seed, "vae"));
  SimilarityResult r;
  r.vae_loss = std::move(trained.epoch_loss);
  for (const auto& [id, samples] : per_agent) {
    auto& z = r.latents[id];
    z.reserve(samples.size());
    for (const auto& s : samples) z.push_back(similarity::encode(trained.model, s.x, id));
  }
  r.distances = similarity::distance_matrix(r.latents, sources, targets, sim.distance);
  r.target = sim.target;
  if (sim.target >= 0) {
    r.selected = similarity::select_source(r.distances, sim.target);
    r.selected_distance = r.distances.at(r.selected, sim.target).distance;
  }
  return r;
}

transfer::TargetSlot target_slot(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                                 int target_index) {
  transfer::TargetSlot slot;
  slot.scenario = config.scenario;
  slot.env_seed = config.seed;
  slot.target_index = target_index;
  slot.peers.resize(pretrained.size());
  for (std::size_t k = 0; k < pretrained.size(); ++k)
    if (static_cast<int>(k) != target_index) slot.peers[k] = td3::Controller::frozen(pretrained[k]);
  return slot;
}

std::vector<double> scratch_rewards(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                                    int target_index, std::int64_t steps) {
  const auto slot = target_slot(config, pretrained, target_index);
  const int id = config.scenario.cells[static_cast<std::size_t>(target_index)].cell_id;
  td3::Td3Agent scratch(id, config.agent, derive_seed(config.seed, "scratch", static_cast<std::uint64_t>(id)));
  td3::Coordinator coord(slot.scenario, slot.env_seed);
  for (std::size_t k = 0; k < slot.peers.size(); ++k)
    if (static_cast<int>(k) != target_index) coord.set_controller(static_cast<int>(k), slot.peers[k]);
  coord.set_controller(target_index, td3::Controller::learner(scratch, config.schedule.agent_schedule()));
  std::vector<double> rewards;
  rewards.reserve(static_cast<std::size_t>(std::max<std::int64_t>(steps, 0)));
  for (std::int64_t s = 0; s < steps; ++s)
    rewards.push_back(coord.advance().rewards[static_cast<std::size_t>(target_index)]);
  return rewards;
}

transfer::TransferPlan make_plan(const ExperimentConfig& config, int source_id, int target_id,
                                 std::size_t skip_leading) {
  transfer::TransferPlan p;
  p.source = source_id;
  p.target = target_id;
  p.strategy = config.transfer.strategy;
  p.instance_fraction = config.transfer.instance_fraction;
  p.frozen_layers = config.transfer.frozen_layers;
  p.fine_tune_steps = config.schedule.tl_training_steps;
  p.reset_optimizer = config.transfer.reset_optimizer;
  p.skip_leading = config.transfer.skip_exploration_instances ? skip_leading : 0;
  p.fine_tune_noise = config.transfer.fine_tune_noise;
  p.seed = derive_seed(config.seed, "instances", static_cast<std::uint64_t>(target_id));
  return p;
}

namespace {

/// Transitions of the exploration phases still present at the front of an
/// exported buffer, given how many the agent stored in total.
std::size_t exploration_prefix(const ExperimentConfig& config, std::int64_t stored, std::size_t present) {
  const auto explore = std::max(config.schedule.exploration_steps, config.schedule.default_action_steps);
  const auto evicted = std::max<std::int64_t>(0, stored - static_cast<std::int64_t>(present));
  return static_cast<std::size_t>(std::clamp<std::int64_t>(explore - evicted, 0, static_cast<std::int64_t>(present)));
}

}  // namespace

TransferResult run_transfer(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                            std::span<const td3::Transition> source_transitions, int source_index,
                            int target_index, const std::optional<std::vector<double>>& scratch) {
  const auto& sc = config.scenario;
  const auto& source = pretrained.at(static_cast<std::size_t>(source_index));
  const int target_id = sc.cells.at(static_cast<std::size_t>(target_index)).cell_id;
  TransferResult r;
  r.plan = make_plan(config, source.cell_id, target_id,
                     exploration_prefix(config, source.env_steps, source_transitions.size()));
  r.target = td3::Td3Agent(target_id, config.agent,
                           derive_seed(config.seed, "target", static_cast<std::uint64_t>(target_id)));
  transfer::apply_plan(source, source_transitions, r.target, r.plan);

  const auto slot = target_slot(config, pretrained, target_index);
  auto tuned = transfer::fine_tune(r.target, slot, config.schedule.tl_training_steps, config.transfer.fine_tune_noise);
  r.trace = std::move(tuned.trace);
  r.tl_rewards = std::move(tuned.rewards);
  r.diverged = tuned.diverged;

  const auto steps = static_cast<std::int64_t>(r.tl_rewards.size());
  r.scratch_rewards = scratch ? *scratch : scratch_rewards(config, pretrained, target_index, steps);
  if (static_cast<std::int64_t>(r.scratch_rewards.size()) < steps)
    throw DependencyError("scratch reference has " + std::to_string(r.scratch_rewards.size()) +
                          " steps, the transfer run " + std::to_string(steps));
  r.scratch_rewards.resize(static_cast<std::size_t>(steps));
  r.gain.resize(r.tl_rewards.size());
  for (std::size_t i = 0; i < r.gain.size(); ++i) r.gain[i] = r.tl_rewards[i] - r.scratch_rewards[i];
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

double throughput_satisfaction(std::span<const SliceMetrics> metrics, std::span<const SliceRequirement> reqs) {
  if (metrics.size() != reqs.size()) throw DimensionError("metrics and requirements differ in length");
  double s = 1.0;
  for (std::size_t i = 0; i < metrics.size(); ++i)
    if (metrics[i].ue_count > 0) s = std::min(s, metrics[i].throughput / reqs[i].throughput_target);
  return std::clamp(s, 0.0, 1.0);
}

double max_slice_delay(std::span<const SliceMetrics> metrics, const DelayModel& delay) {
  double d = delay.min_ms;
  for (const auto& m : metrics)
    if (m.ue_count > 0) d = std::max(d, m.delay);
  return d;
}

EvalSummary summarize(const Trace& trace, const Scenario& scenario) {
  EvalSummary s;
  for (const auto& st : trace)
    for (int k = 0; k < scenario.cell_count(); ++k) {
      const auto& m = st.per_cell[static_cast<std::size_t>(k)];
      s.satisfaction.push_back(throughput_satisfaction(m, scenario.cells[static_cast<std::size_t>(k)].requirements));
      s.max_delay.push_back(max_slice_delay(m, scenario.delay));
      s.reward.push_back(st.rewards[static_cast<std::size_t>(k)]);
    }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  s.mean_satisfaction = mean(s.satisfaction);
  s.mean_max_delay = mean(s.max_delay);
  s.mean_reward = mean(s.reward);
  if (!s.satisfaction.empty())
    s.failure_rate = static_cast<double>(std::count_if(s.satisfaction.begin(), s.satisfaction.end(),
                                                       [](double v) { return v < 0.95; })) /
                     static_cast<double>(s.satisfaction.size());
  return s;
}

std::vector<CdfPoint> empirical_cdf(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (i + 1 == values.size() || values[i + 1] != values[i])
      out.push_back({values[i], static_cast<double>(i + 1) / n});
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

template <typename T>
T parse_field(std::string_view s, const fs::path& path, std::size_t line) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw IoError(path.string() + ":" + std::to_string(line) + ": malformed field '" + std::string(s) + "'");
  return v;
}

}  // namespace

void write_metrics_csv(const Trace& trace, const Scenario& scenario, const fs::path& path) {
  auto os = open_out(path);
  os << "t,cell,slice,throughput,delay,load,ues,share,reward\n";
  for (const auto& st : trace)
    for (int k = 0; k < scenario.cell_count(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      for (int n = 0; n < scenario.slices; ++n) {
        const auto& m = st.per_cell[kk][static_cast<std::size_t>(n)];
        os << st.t << ',' << scenario.cells[kk].cell_id << ',' << n + 1 << ',' << num(m.throughput) << ','
           << num(m.delay) << ',' << num(m.load) << ',' << m.ue_count << ',' << num(st.actions[kk][n]) << ','
           << num(st.rewards[kk]) << '\n';
      }
    }
  if (!os) throw IoError("failed writing " + path.string());
}

Trace read_metrics_csv(const fs::path& path, const Scenario& scenario) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing metrics file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "t,cell,slice,throughput,delay,load,ues,share,reward")
    throw IoError(path.string() + ": unexpected header");
  const auto k_cells = static_cast<std::size_t>(scenario.cell_count());
  const auto n_slices = static_cast<std::size_t>(scenario.slices);
  Trace trace;
  std::vector<Eigen::VectorXd> shares;
  std::size_t row = 0, lineno = 1;
  std::vector<std::string_view> f;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    f.clear();
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      f.push_back(rest.substr(0, pos));
    f.push_back(rest);
    if (f.size() != 9) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    const std::size_t k = (row / n_slices) % k_cells;
    const std::size_t n = row % n_slices;
    if (k == 0 && n == 0) {
      td3::TraceStep st;
      st.t = parse_field<std::int64_t>(f[0], path, lineno);
      st.per_cell.assign(k_cells, std::vector<SliceMetrics>(n_slices));
      st.rewards.assign(k_cells, 0.0);
      st.phases.assign(k_cells, td3::Phase::Evaluation);
      trace.push_back(std::move(st));
      shares.assign(k_cells, Eigen::VectorXd(static_cast<Eigen::Index>(n_slices)));
    }
    auto& st = trace.back();
    if (parse_field<std::int64_t>(f[0], path, lineno) != st.t ||
        parse_field<int>(f[1], path, lineno) != scenario.cells[k].cell_id ||
        parse_field<std::size_t>(f[2], path, lineno) != n + 1)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": rows out of order for this scenario");
    auto& m = st.per_cell[k][n];
    m.throughput = parse_field<double>(f[3], path, lineno);
    m.delay = parse_field<double>(f[4], path, lineno);
    m.load = parse_field<double>(f[5], path, lineno);
    m.ue_count = parse_field<int>(f[6], path, lineno);
    shares[k](static_cast<Eigen::Index>(n)) = parse_field<double>(f[7], path, lineno);
    st.rewards[k] = parse_field<double>(f[8], path, lineno);
    if (n + 1 == n_slices && k + 1 == k_cells)
      for (const auto& s : shares) st.actions.emplace_back(s);
    ++row;
  }
  if (row % (n_slices * k_cells) != 0) throw IoError(path.string() + ": truncated final step");
  return trace;
}

void write_cdf_csv(const std::vector<CdfPoint>& cdf, const fs::path& path) {
  auto os = open_out(path);
  os << "value,cdf,ccdf\n";
  for (const auto& p : cdf) os << num(p.value) << ',' << num(p.cdf) << ',' << num(1.0 - p.cdf) << '\n';
}

void write_gain_csv(const TransferResult& r, const fs::path& path) {
  auto os = open_out(path);
  os << "step,reward_tl,reward_scratch,gain\n";
  for (std::size_t i = 0; i < r.gain.size(); ++i)
    os << i + 1 << ',' << num(r.tl_rewards[i]) << ',' << num(r.scratch_rewards[i]) << ',' << num(r.gain[i]) << '\n';
}

void write_json(const json& j, const fs::path& path) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

json summary_json(const EvalSummary& s) {
  return {{"mean_throughput_satisfaction", s.mean_satisfaction},
          {"mean_reward", s.mean_reward},
          {"mean_max_delay_ms", s.mean_max_delay},
          {"failure_rate_0.95", s.failure_rate},
          {"samples", s.satisfaction.size()}};
}

json plan_json(const transfer::TransferPlan& p) {
  return {{"source", p.source},
          {"target", p.target},
          {"strategy", transfer::strategy_name(p.strategy)},
          {"instance_fraction", p.instance_fraction},
          {"frozen_layers", p.frozen_layers},
          {"fine_tune_steps", p.fine_tune_steps},
          {"fine_tune_noise", p.fine_tune_noise},
          {"reset_optimizer", p.reset_optimizer},
          {"skip_leading", p.skip_leading}};
}

json base_meta(const ExperimentConfig& config, const std::string& command) {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  return {{"command", command},
          {"seed", config.seed},
          {"config", config.echo},
          {"scenario", to_json(config.scenario)},
          {"versions",
           {{"netslice", kVersion}, {"eigen", eigen.str()}, {"compiler", __VERSION__}, {"cxx", __cplusplus}}}};
}

// ---------------------------------------------------------------------------
// Stages

namespace {

fs::path agent_file(const fs::path& dir, int id) { return dir / ("cell_" + std::to_string(id) + ".ckpt"); }
fs::path buffer_file(const fs::path& dir, int id) { return dir / ("cell_" + std::to_string(id) + ".nsrb"); }

void write_eval_artifacts(const Trace& window, const Scenario& scenario, const fs::path& dir, json& meta) {
  const auto summary = summarize(window, scenario);
  write_cdf_csv(empirical_cdf(summary.satisfaction), dir / "cdf_throughput.csv");
  write_cdf_csv(empirical_cdf(summary.max_delay), dir / "cdf_delay.csv");
  meta["evaluation"] = summary_json(summary);
}

Trace tail(const Trace& trace, std::int64_t steps) {
  const auto n = std::min<std::size_t>(trace.size(), static_cast<std::size_t>(std::max<std::int64_t>(steps, 0)));
  return Trace(trace.end() - static_cast<std::ptrdiff_t>(n), trace.end());
}

int target_id(const ExperimentConfig& config) {
  if (config.transfer.target >= 0) return config.transfer.target;
  if (config.similarity.target >= 0) return config.similarity.target;
  throw ConfigError("transfer: no target cell configured");
}

}  // namespace

std::vector<td3::Td3Agent> load_agents(const Scenario& scenario, const fs::path& dir) {
  std::vector<td3::Td3Agent> agents;
  for (const auto& c : scenario.cells) {
    const auto p = agent_file(dir, c.cell_id);
    if (!fs::exists(p)) throw DependencyError("missing agent checkpoint " + p.string());
    agents.push_back(td3::load_agent(p));
  }
  return agents;
}

void stage_baseline(const ExperimentConfig& config, const fs::path& out) {
  const auto dir = out / "baseline";
  fs::create_directories(dir);
  const auto trace = run_baseline(config.scenario, config.seed, config.schedule.madrl_steps());
  write_metrics_csv(trace, config.scenario, dir / "metrics.csv");
  auto meta = base_meta(config, "baseline");
  write_eval_artifacts(tail(trace, config.schedule.evaluation_steps), config.scenario, dir, meta);
  write_json(meta, dir / "run_meta.json");
}

void stage_train(const ExperimentConfig& config, const fs::path& out) {
  const auto dir = out / "train";
  fs::create_directories(dir / "agents");
  fs::create_directories(dir / "buffers");
  auto r = run_madrl(config);
  write_metrics_csv(r.trace, config.scenario, dir / "metrics.csv");
  for (const auto& a : r.agents) {
    td3::save_agent(a, agent_file(dir / "agents", a.cell_id));
    td3::save_buffer(a.buffer, buffer_file(dir / "buffers", a.cell_id));
  }
  auto meta = base_meta(config, "train");
  json div = json::object();
  for (const auto& [id, err] : r.diverged) div[std::to_string(id)] = err;
  meta["diverged"] = div;
  write_eval_artifacts(tail(r.trace, config.schedule.evaluation_steps), config.scenario, dir, meta);
  write_json(meta, dir / "run_meta.json");
}

void stage_similarity(const ExperimentConfig& config, const fs::path& out) {
  const auto dir = out / "similarity";
  const auto trace = read_metrics_csv(out / "train" / "metrics.csv", config.scenario);
  const auto r = run_similarity(config, trace);
  fs::create_directories(dir);
  similarity::write_distances_csv(r.distances, dir / "distances.csv");
  similarity::write_latents_csv(r.latents, dir / "latents.csv");
  auto meta = base_meta(config, "similarity");
  meta["vae_final_loss"] = r.vae_loss.empty() ? 0.0 : r.vae_loss.back();
  if (r.target >= 0) {
    meta["target"] = r.target;
    meta["selected_source"] = r.selected;
    meta["selected_distance"] = r.selected_distance;
    json row = json::array();
    for (const auto& e : r.distances.row(r.target)) row.push_back({{"source", e.source}, {"distance", e.distance}});
    meta["candidates"] = row;
  }
  write_json(meta, dir / "run_meta.json");
}

void stage_transfer(const ExperimentConfig& config, const fs::path& out) {
  const auto& sc = config.scenario;
  const int tgt = target_id(config);
  auto pretrained = load_agents(sc, out / "train" / "agents");

  int src = -1;
  std::optional<double> distance;
  const auto& how = config.transfer.source;
  if (how == "auto" || how == "nearest" || how == "farthest") {
    const auto sim = read_json(out / "similarity" / "run_meta.json");
    if (!sim.contains("target") || sim["target"].get<int>() != tgt)
      throw DependencyError("similarity run does not cover target cell " + std::to_string(tgt));
    if (how == "auto") {
      src = sim.at("selected_source").get<int>();
      distance = sim.at("selected_distance").get<double>();
    } else {
      for (const auto& c : sim.at("candidates")) {
        const double d = c.at("distance").get<double>();
        if (!distance || (how == "nearest" ? d < *distance : d > *distance)) {
          distance = d;
          src = c.at("source").get<int>();
        }
      }
    }
  } else {
    try {
      src = std::stoi(how);
    } catch (const std::exception&) {
      throw ConfigError("transfer: invalid source '" + how + "'");
    }
  }
  if (src == tgt) throw ConfigError("transfer: source and target are the same cell");
  const int src_index = sc.index_of(src);
  const int tgt_index = sc.index_of(tgt);
  const auto transitions = td3::load_transitions([&] {
    const auto p = buffer_file(out / "train" / "buffers", src);
    if (!fs::exists(p)) throw DependencyError("missing source buffer " + p.string());
    return p;
  }());

  std::optional<std::vector<double>> scratch;
  if (config.transfer.scratch_reference != "auto") {
    const auto ref = read_metrics_csv(config.transfer.scratch_reference, sc);
    std::vector<double> rewards;
    for (const auto& st : ref) rewards.push_back(st.rewards[static_cast<std::size_t>(tgt_index)]);
    scratch = std::move(rewards);
  }

  auto r = run_transfer(config, pretrained, transitions, src_index, tgt_index, scratch);
  const auto dir = out / "transfer";
  fs::create_directories(dir / "agents");
  fs::create_directories(dir / "buffers");
  write_metrics_csv(r.trace, sc, dir / "metrics.csv");
  write_gain_csv(r, dir / "gain.csv");
  td3::save_agent(r.target, agent_file(dir / "agents", tgt));
  td3::save_buffer(r.target.buffer, buffer_file(dir / "buffers", tgt));
  auto meta = base_meta(config, "transfer");
  meta["source"] = src;
  meta["target"] = tgt;
  meta["distance"] = distance ? json(*distance) : json(nullptr);
  meta["plan"] = plan_json(r.plan);
  meta["diverged"] = r.diverged;
  const auto head = std::min<std::size_t>(200, r.gain.size());
  meta["mean_gain_first_200"] =
      head ? std::accumulate(r.gain.begin(), r.gain.begin() + static_cast<std::ptrdiff_t>(head), 0.0) /
                 static_cast<double>(head)
           : 0.0;
  write_json(meta, dir / "run_meta.json");
}

void stage_evaluate(const ExperimentConfig& config, const fs::path& out) {
  const auto& sc = config.scenario;
  const auto& policy = config.evaluate.policy;
  std::vector<td3::Td3Agent> agents;
  std::vector<td3::Controller> controllers(static_cast<std::size_t>(sc.cell_count()));
  if (policy != "baseline") {
    agents = load_agents(sc, out / "train" / "agents");
    if (policy == "tl") {
      const int tgt = target_id(config);
      const auto p = agent_file(out / "transfer" / "agents", tgt);
      if (!fs::exists(p)) throw DependencyError("missing transferred agent " + p.string());
      agents[static_cast<std::size_t>(sc.index_of(tgt))] = td3::load_agent(p);
    }
    for (std::size_t k = 0; k < agents.size(); ++k) controllers[k] = td3::Controller::frozen(agents[k]);
  }
  const auto trace = run_policies(sc, derive_seed(config.seed, "evaluation"), std::move(controllers),
                                  config.schedule.evaluation_steps);
  const auto dir = out / ("evaluate-" + policy);
  fs::create_directories(dir);
  write_metrics_csv(trace, sc, dir / "metrics.csv");
  auto meta = base_meta(config, "evaluate");
  meta["policy"] = policy;
  write_eval_artifacts(trace, sc, dir, meta);
  write_json(meta, dir / "run_meta.json");
}

}  // namespace netslice::harness
