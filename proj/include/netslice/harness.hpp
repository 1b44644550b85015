#pragma once

// Experiment orchestration: configuration, the baseline / MADRL / similarity /
// transfer / evaluation runs, and their CSV and metadata artifacts.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "netslice/coordinator.hpp"
#include "netslice/env.hpp"
#include "netslice/similarity.hpp"
#include "netslice/td3.hpp"
#include "netslice/transfer.hpp"

namespace netslice::harness {

inline constexpr const char* kVersion = "1.0.0";

using Trace = std::vector<td3::TraceStep>;

struct ScheduleConfig {
  std::int64_t default_action_steps = 200;
  std::int64_t exploration_steps = 3000;  // includes the default-action steps
  std::int64_t training_steps = 5500;
  std::int64_t evaluation_steps = 250;
  std::int64_t tl_training_steps = 4000;
  double noise_start = 0.3;
  double noise_end = 0.05;
  bool random_exploration = false;

  td3::Schedule agent_schedule() const;
  std::int64_t madrl_steps() const;  // exploration + training + evaluation
};

struct SimilarityConfig {
  int target = -1;              // cell id; -1 computes the full matrix
  std::vector<int> candidates;  // empty: every other cell
  similarity::VaeConfig vae;
  similarity::DistanceOptions distance;
};

struct TransferConfig {
  /// "auto" (selected by the similarity run), "nearest", "farthest" or a cell id.
  std::string source = "auto";
  int target = -1;
  transfer::Strategy strategy = transfer::Strategy::Integrated;
  double instance_fraction = 1.0;
  int frozen_layers = 1;
  double fine_tune_noise = 0.1;
  bool reset_optimizer = true;
  bool skip_exploration_instances = false;
  /// "auto" runs the paired scratch reference; otherwise a metrics.csv path.
  std::string scratch_reference = "auto";
};

struct EvaluateConfig {
  std::string policy = "madrl";  // baseline | madrl | tl
};

struct ExperimentConfig {
  Scenario scenario;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;
  td3::Td3Config agent;
  SimilarityConfig similarity;
  TransferConfig transfer;
  EvaluateConfig evaluate;
  int threads = 1;
  nlohmann::json echo;  // configuration as given
};

/// `scenario` is a file path (relative to the config file), an inline
/// scenario object or {"preset": "three-cell" | "twelve-cell"}. Throws
/// ConfigError on invalid content or missing referenced files.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Default experiment on a preset scenario.
ExperimentConfig preset_config(const std::string& preset);

/// Independent stream seed for one purpose of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

// ---------------------------------------------------------------------------
// Runs

/// Runs `steps` network steps with one controller per cell.
Trace run_policies(const Scenario& scenario, std::uint64_t env_seed, std::vector<td3::Controller> controllers,
                   std::int64_t steps, int threads = 1);

/// Proportional allocation with perfect demand knowledge, no learning.
Trace run_baseline(const Scenario& scenario, std::uint64_t env_seed, std::int64_t steps);

struct MadrlResult {
  std::vector<td3::Td3Agent> agents;  // scenario order
  Trace trace;
  std::map<int, std::string> diverged;  // cell id -> error
};

/// Trains every cell from scratch through the full schedule.
MadrlResult run_madrl(const ExperimentConfig& config);

/// Per-step (state, action, reward) history of one cell.
std::vector<similarity::AgentStep> agent_steps(const Trace& trace, const Scenario& scenario, int cell_index);

struct SimilarityResult {
  similarity::DistanceMatrix distances;
  std::map<int, std::vector<similarity::LatentStats>> latents;
  std::vector<double> vae_loss;
  int target = -1;
  int selected = -1;
  double selected_distance = 0.0;
};

/// Default-action samples of every cell in `trace`, a pooled VAE, distances
/// from candidates to targets and, for a single target, the selected source.
SimilarityResult run_similarity(const ExperimentConfig& config, const Trace& trace);

/// The target's slot in a network whose other cells run the frozen
/// pretrained agents.
transfer::TargetSlot target_slot(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                                 int target_index);

/// Reward trace of a freshly initialised target trained with the standard
/// schedule in the same slot and environment seed.
std::vector<double> scratch_rewards(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                                    int target_index, std::int64_t steps);

struct TransferResult {
  td3::Td3Agent target;
  transfer::TransferPlan plan;
  Trace trace;                    // fine-tuning trace, whole network
  std::vector<double> tl_rewards;
  std::vector<double> scratch_rewards;
  std::vector<double> gain;       // tl - scratch, per step
  bool diverged = false;
};

/// Builds the target from `source_index`'s agent and buffer, fine-tunes it
/// for tl_training_steps and aligns it with the scratch reference.
TransferResult run_transfer(const ExperimentConfig& config, std::vector<td3::Td3Agent>& pretrained,
                            std::span<const td3::Transition> source_transitions, int source_index,
                            int target_index, const std::optional<std::vector<double>>& scratch = std::nullopt);

transfer::TransferPlan make_plan(const ExperimentConfig& config, int source_id, int target_id,
                                 std::size_t skip_leading);

// ---------------------------------------------------------------------------
// Evaluation

/// min over occupied slices of min(1, throughput / target); 1 when no slice
/// is occupied.
double throughput_satisfaction(std::span<const SliceMetrics> metrics, std::span<const SliceRequirement> reqs);
/// Largest delay over occupied slices; the minimum delay when none is.
double max_slice_delay(std::span<const SliceMetrics> metrics, const DelayModel& delay);

struct EvalSummary {
  std::vector<double> satisfaction;  // per cell per step
  std::vector<double> max_delay;
  std::vector<double> reward;
  double mean_satisfaction = 0.0;
  double mean_max_delay = 0.0;
  double mean_reward = 0.0;
  double failure_rate = 0.0;  // fraction with satisfaction < 0.95
};

EvalSummary summarize(const Trace& trace, const Scenario& scenario);

struct CdfPoint {
  double value = 0.0;
  double cdf = 0.0;
};
/// Empirical CDF at each distinct value, non-decreasing, ending at 1.
std::vector<CdfPoint> empirical_cdf(std::vector<double> values);

// ---------------------------------------------------------------------------
// Artifacts

void write_metrics_csv(const Trace& trace, const Scenario& scenario, const std::filesystem::path& path);
Trace read_metrics_csv(const std::filesystem::path& path, const Scenario& scenario);
void write_cdf_csv(const std::vector<CdfPoint>& cdf, const std::filesystem::path& path);
void write_gain_csv(const TransferResult& r, const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
nlohmann::json summary_json(const EvalSummary& s);
nlohmann::json plan_json(const transfer::TransferPlan& p);

/// Fields shared by every run_meta file.
nlohmann::json base_meta(const ExperimentConfig& config, const std::string& command);

// ---------------------------------------------------------------------------
// Pipeline stages. Each writes into <out>/<stage>/ and reads earlier stages
// from there; a missing prerequisite throws DependencyError.

void stage_baseline(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_train(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_similarity(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_transfer(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& out);

std::vector<td3::Td3Agent> load_agents(const Scenario& scenario, const std::filesystem::path& dir);

}  // namespace netslice::harness
