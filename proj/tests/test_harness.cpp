#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "netslice/harness.hpp"
#include "netslice/scenario.hpp"

using namespace netslice;
using namespace netslice::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kConfigs = fs::path(NETSLICE_SOURCE_DIR) / "configs";

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("netslice_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json tiny_config(std::uint64_t seed) {
  return {{"scenario", {{"preset", "three-cell"}}},
          {"seed", seed},
          {"schedule",
           {{"default_action_steps", 30},
            {"exploration_steps", 90},
            {"training_steps", 60},
            {"evaluation_steps", 20},
            {"tl_training_steps", 40}}},
          {"similarity", {{"target", 3}, {"candidates", {1, 2}}, {"vae", {{"epochs", 5}, {"min_samples", 10}}}}},
          {"transfer", {{"source", "auto"}, {"target", 3}}},
          {"evaluate", {{"policy", "tl"}}}};
}

}  // namespace

TEST_CASE("shipped configs parse and reference the presets") {
  const auto three = load_config(kConfigs / "three_cell.json");
  CHECK(to_json(three.scenario) == to_json(three_cell_scenario()));
  CHECK(three.similarity.target == 3);
  CHECK(three.transfer.strategy == transfer::Strategy::Integrated);
  CHECK(three.schedule.madrl_steps() == 3000 + 5500 + 250);
  CHECK(three.agent.state_dim == 16);
  const auto twelve = load_config(kConfigs / "twelve_cell.json");
  CHECK(twelve.scenario.cell_count() == 12);
  CHECK(twelve.similarity.target == -1);
}

TEST_CASE("invalid configurations raise configuration errors") {
  const auto bad = [](json j) { CHECK_THROWS_AS(config_from_json(j), ConfigError); };
  bad(json::array());
  bad({{"seed", 1}});
  bad({{"scenario", {{"preset", "nine-cell"}}}});
  bad({{"scenario", "does_not_exist.json"}});
  auto j = tiny_config(1);
  j["schedule"]["training_steps"] = -5;
  bad(j);
  j = tiny_config(1);
  j["evaluate"]["policy"] = "oracle";
  bad(j);
  j = tiny_config(1);
  j["transfer"]["instance_fraction"] = 1.5;
  bad(j);
  j = tiny_config(1);
  j["similarity"]["target"] = 17;
  bad(j);
  j = tiny_config(1);
  j["agent"] = {{"gamma", "high"}};
  bad(j);
  j = tiny_config(1);
  j["transfer"]["strategy"] = "distill";
  bad(j);
  CHECK_THROWS_AS(load_config(kConfigs / "missing.json"), ConfigError);
  const auto dir = temp_dir("badjson");
  { std::ofstream(dir / "c.json") << "{ not json"; }
  CHECK_THROWS_AS(load_config(dir / "c.json"), ConfigError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, "agent", 3) == derive_seed(1, "agent", 3));
  CHECK(derive_seed(1, "agent", 3) != derive_seed(1, "agent", 4));
  CHECK(derive_seed(1, "agent", 3) != derive_seed(2, "agent", 3));
  CHECK(derive_seed(1, "agent") != derive_seed(1, "vae"));
}

TEST_CASE("schedule phases and exploration noise") {
  td3::Schedule s{10, 30, 50, 0.3, 0.05, false};
  CHECK(s.phase_at(0) == td3::Phase::Default);
  CHECK(s.phase_at(9) == td3::Phase::Default);
  CHECK(s.phase_at(10) == td3::Phase::Exploration);
  CHECK(s.phase_at(29) == td3::Phase::Exploration);
  CHECK(s.phase_at(30) == td3::Phase::Training);
  CHECK(s.phase_at(79) == td3::Phase::Training);
  CHECK(s.phase_at(80) == td3::Phase::Evaluation);
  CHECK(s.noise_at(10) == doctest::Approx(0.3));
  CHECK(s.noise_at(29) == doctest::Approx(0.05));
  CHECK(s.noise_at(19) < 0.3);
  CHECK(s.noise_at(60) == doctest::Approx(0.05));
}

TEST_CASE("the coordinator follows each learner's schedule") {
  const auto sc = three_cell_scenario();
  td3::Td3Agent a(1, td3::Td3Config{}, 1);
  td3::Coordinator coord(sc, 3);
  coord.set_controller(0, td3::Controller::learner(a, td3::Schedule{5, 40, 20}));
  coord.set_controller(1, td3::Controller::baseline());
  coord.set_controller(2, td3::Controller::fixed_action(PartitionAction(Eigen::Vector4d(0.7, 0.1, 0.1, 0.1))));
  for (int t = 0; t < 70; ++t) {
    const auto st = coord.advance();
    CHECK(st.t == t + 1);
    if (t < 5) CHECK(st.actions[0] == PartitionAction::equal(4));
    CHECK(st.actions[2][0] == 0.7);
    const auto traffic = slice_traffic(sc, 3, 1, t + 1);
    CHECK(st.actions[1] == baseline_action(traffic.demands));
  }
  CHECK(a.env_steps == 60);
  CHECK(a.buffer.size() == 60);
  CHECK(a.train_calls == 60 - 32 + 1);
  td3::Td3Config wrong;
  wrong.state_dim = 12;
  td3::Td3Agent w(1, wrong, 1);
  CHECK_THROWS_AS(coord.set_controller(0, td3::Controller::frozen(w)), IncompatibleArchitectureError);
  CHECK_THROWS_AS(coord.set_controller(0, td3::Controller::fixed_action(PartitionAction::equal(3))), ActionError);
}

TEST_CASE("training results do not depend on the worker count") {
  auto cfg = config_from_json(tiny_config(5));
  const auto one = run_madrl(cfg);
  cfg.threads = 3;
  const auto three = run_madrl(cfg);
  for (std::size_t k = 0; k < one.agents.size(); ++k) CHECK(one.agents[k].actor == three.agents[k].actor);
  CHECK(one.trace.size() == static_cast<std::size_t>(cfg.schedule.madrl_steps()));
}

TEST_CASE("baseline with steady demand keeps a steady allocation") {
  auto sc = three_cell_scenario();
  for (auto& m : sc.masks) m.amplitude = 0.0;
  sc.mask_noise_std = 0.0;
  const auto trace = run_baseline(sc, 1, 30);
  for (const auto& st : trace)
    for (std::size_t k = 0; k < 3; ++k) CHECK(st.actions[k] == trace.front().actions[k]);
}

TEST_CASE("evaluation metrics") {
  const auto reqs = requirement_group_a();
  std::vector<SliceMetrics> m(4);
  for (int n = 0; n < 4; ++n) {
    m[static_cast<std::size_t>(n)].throughput = reqs[static_cast<std::size_t>(n)].throughput_target * 2;
    m[static_cast<std::size_t>(n)].ue_count = 3;
    m[static_cast<std::size_t>(n)].delay = 1.0 + n;
  }
  CHECK(throughput_satisfaction(m, reqs) == 1.0);
  m[1].throughput = 1.5;
  CHECK(throughput_satisfaction(m, reqs) == 0.5);
  m[1].ue_count = 0;
  CHECK(throughput_satisfaction(m, reqs) == 1.0);
  CHECK(max_slice_delay(m, DelayModel{}) == 4.0);
  for (auto& x : m) x.ue_count = 0;
  CHECK(max_slice_delay(m, DelayModel{}) == 0.5);
}

TEST_CASE("empirical CDF") {
  const auto cdf = empirical_cdf({0.3, 0.1, 0.3, 1.0, 0.2});
  REQUIRE(cdf.size() == 4);
  CHECK(cdf[0].value == 0.1);
  CHECK(cdf[0].cdf == doctest::Approx(0.2));
  CHECK(cdf[2].value == 0.3);
  CHECK(cdf[2].cdf == doctest::Approx(0.8));
  CHECK(cdf.back().cdf == 1.0);
  CHECK(empirical_cdf({}).empty());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(1000);
  for (auto& x : v) x = std::round(u(rng) * 50) / 50;
  const auto c = empirical_cdf(v);
  for (std::size_t i = 1; i < c.size(); ++i) {
    CHECK(c[i].value > c[i - 1].value);
    CHECK(c[i].cdf > c[i - 1].cdf);
  }
}

TEST_CASE("metrics CSV round-trips") {
  const auto sc = three_cell_scenario();
  const auto trace = run_baseline(sc, 2, 25);
  const auto dir = temp_dir("csv");
  write_metrics_csv(trace, sc, dir / "m.csv");
  const auto back = read_metrics_csv(dir / "m.csv", sc);
  REQUIRE(back.size() == trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(back[i].t == trace[i].t);
    CHECK(back[i].rewards == trace[i].rewards);
    CHECK(back[i].actions == trace[i].actions);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t n = 0; n < 4; ++n) {
        auto expect = trace[i].per_cell[k][n];
        expect.demand = 0.0;
        CHECK(back[i].per_cell[k][n] == expect);
      }
  }
  const auto text = slurp(dir / "m.csv");
  CHECK(text.rfind("t,cell,slice,throughput,delay,load,ues,share,reward\n1,1,1,", 0) == 0);

  CHECK_THROWS_AS(read_metrics_csv(dir / "missing.csv", sc), DependencyError);
  { std::ofstream(dir / "bad.csv") << "t,cell,slice,throughput,delay,load,ues,share,reward\n1,1,1,x,1,1,1,1,1\n"; }
  CHECK_THROWS_AS(read_metrics_csv(dir / "bad.csv", sc), IoError);
  { std::ofstream(dir / "short.csv") << "t,cell,slice,throughput,delay,load,ues,share,reward\n1,1,1,1,1,1,1,1,1\n"; }
  CHECK_THROWS_AS(read_metrics_csv(dir / "short.csv", sc), IoError);
  CHECK_THROWS_AS(read_metrics_csv(dir / "m.csv", twelve_cell_scenario()), IoError);
}

TEST_CASE("pipeline stages are deterministic and chain through their artifacts") {
  const auto cfg = config_from_json(tiny_config(7));
  const auto a = temp_dir("pipe_a");
  const auto b = temp_dir("pipe_b");

  CHECK_THROWS_AS(stage_similarity(cfg, a), DependencyError);
  CHECK_THROWS_AS(stage_transfer(cfg, a), DependencyError);

  for (const auto& out : {a, b}) {
    stage_baseline(cfg, out);
    stage_train(cfg, out);
    stage_similarity(cfg, out);
    stage_transfer(cfg, out);
    stage_evaluate(cfg, out);
  }
  for (const char* f : {"baseline/metrics.csv", "train/metrics.csv", "similarity/distances.csv",
                        "transfer/metrics.csv", "transfer/gain.csv", "evaluate-tl/metrics.csv",
                        "evaluate-tl/cdf_throughput.csv", "evaluate-tl/cdf_delay.csv", "train/agents/cell_3.ckpt"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }

  const auto train_rows = read_metrics_csv(a / "train" / "metrics.csv", cfg.scenario);
  CHECK(train_rows.size() == static_cast<std::size_t>(cfg.schedule.madrl_steps()));
  const auto meta = read_json(a / "transfer" / "run_meta.json");
  CHECK((meta["source"] == 1 || meta["source"] == 2));
  CHECK(meta["plan"]["fine_tune_steps"] == 40);
  CHECK(meta["versions"]["netslice"] == kVersion);
  const auto gain = slurp(a / "transfer" / "gain.csv");
  CHECK(std::count(gain.begin(), gain.end(), '\n') == 41);

  const auto other = temp_dir("pipe_c");
  stage_train(config_from_json(tiny_config(8)), other);
  CHECK(slurp(other / "train" / "metrics.csv") != slurp(a / "train" / "metrics.csv"));
}

TEST_CASE("a single-cell network runs without neighbours") {
  auto sc = three_cell_scenario();
  sc.cells.resize(1);
  sc.cells[0].neighbor_ids.clear();
  sc.cells[0].interference_gains.clear();
  auto j = tiny_config(3);
  j["scenario"] = to_json(sc);
  j.erase("similarity");
  j.erase("transfer");
  const auto cfg = config_from_json(j);
  const auto r = run_madrl(cfg);
  CHECK(r.trace.size() == static_cast<std::size_t>(cfg.schedule.madrl_steps()));
  CHECK(r.diverged.empty());
}
