#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <map>

#include "netslice/harness.hpp"

namespace h = netslice::harness;

int main(int argc, char** argv) {
  CLI::App app{"Multi-cell network slicing with TD3 agents, similarity analysis and transfer learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", h::kVersion);

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "runs";
  };
  const std::map<std::string, std::pair<std::string, void (*)(const h::ExperimentConfig&, const std::filesystem::path&)>>
      stages{{"baseline", {"Traffic-proportional baseline with perfect demand knowledge", &h::stage_baseline}},
             {"train", {"Train one TD3 agent per cell from scratch", &h::stage_train}},
             {"similarity", {"Pooled VAE, inter-agent distances and source selection", &h::stage_similarity}},
             {"transfer", {"Transfer to the target cell and fine-tune against a scratch reference", &h::stage_transfer}},
             {"evaluate", {"Frozen-policy evaluation with satisfaction and delay CDFs", &h::stage_evaluate}}};

  std::map<std::string, Args> args;
  for (const auto& [name, stage] : stages) {
    auto* sub = app.add_subcommand(name, stage.first);
    auto& a = args[name];
    sub->add_option("--config", a.config, "Experiment configuration (JSON)")->required();
    sub->add_option("--seed", a.seed, "Overrides the configured seed");
    sub->add_option("--out", a.out, "Experiment directory")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(netslice::ErrorCategory::Config);
  }

  for (const auto& [name, stage] : stages) {
    if (!app.got_subcommand(name)) continue;
    const auto& a = args[name];
    try {
      auto config = h::load_config(a.config);
      if (a.seed) config.seed = *a.seed;
      stage.second(config, a.out);
      return 0;
    } catch (const netslice::Error& e) {
      std::fprintf(stderr, "error [%s]: %s\n", netslice::category_name(e.category()), e.what());
      return static_cast<int>(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
      std::fprintf(stderr, "error [io]: %s\n", e.what());
      return static_cast<int>(netslice::ErrorCategory::Io);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
  }
  return 1;
}
