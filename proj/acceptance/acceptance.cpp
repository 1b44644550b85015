// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "netslice/harness.hpp"
#include "netslice/scenario.hpp"

using namespace netslice;
using namespace netslice::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double mean(const std::vector<double>& v, std::size_t n = SIZE_MAX) {
  n = std::min(n, v.size());
  return n ? std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n)
           : 0.0;
}

// Largest relative error between backprop and central differences of
// L = sum(W .* f(X)) over every parameter of `net`.
double fd_error(nn::Mlp<double> net, std::uint64_t seed) {
  nn::Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    return Eigen::MatrixXd(Eigen::MatrixXd::NullaryExpr(r, c, [&] { return n01(rng); }));
  };
  for (auto& l : net.mutable_layers()) l.bias = draw(l.outputs(), 1).col(0) * 0.1;
  const auto x = draw(net.input_size(), 4);
  const auto w = draw(net.output_size(), 4);
  const auto loss = [&](const nn::Mlp<double>& m) { return (w.array() * m.forward(x).output().array()).sum(); };
  const auto g = net.backward(net.forward(x), w);
  const double eps = 1e-6;
  double worst = 0.0;
  auto probe = [&](double analytic, auto&& perturb) {
    auto p = net, m = net;
    perturb(p, eps);
    perturb(m, -eps);
    const double fd = (loss(p) - loss(m)) / (2 * eps);
    if (std::abs(fd) > 1e-6 || std::abs(analytic) > 1e-6)
      worst = std::max(worst, std::abs(fd - analytic) / std::max({1e-8, std::abs(fd), std::abs(analytic)}));
  };
  for (std::size_t k = 0; k < net.depth(); ++k) {
    for (Eigen::Index i = 0; i < net.layer(k).weight.size(); ++i)
      probe(g.layers[k].weight.data()[i], [&](auto& n, double e) { n.mutable_layer(k).weight.data()[i] += e; });
    for (Eigen::Index i = 0; i < net.layer(k).bias.size(); ++i)
      probe(g.layers[k].bias(i), [&](auto& n, double e) { n.mutable_layer(k).bias(i) += e; });
  }
  return worst;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Mean reward of every cell over a fresh evaluation window.
double evaluate(const ExperimentConfig& cfg, std::vector<td3::Controller> controllers) {
  const auto trace = run_policies(cfg.scenario, derive_seed(cfg.seed, "evaluation"), std::move(controllers),
                                  cfg.schedule.evaluation_steps);
  return summarize(trace, cfg.scenario).mean_reward;
}

struct SeedRun {
  int selected = -1;
  double jump_tl = 0, jump_scratch = 0;
  double gain_near = 0, gain_far = 0;
  double eval_baseline = 0, eval_madrl = 0, eval_tl = 0;
};

SeedRun three_cell_run(const fs::path& config_dir, std::uint64_t seed) {
  auto cfg = load_config(config_dir / "three_cell.json");
  cfg.seed = seed;
  const auto& sc = cfg.scenario;
  auto madrl = run_madrl(cfg);
  SeedRun out;
  const auto sim = run_similarity(cfg, madrl.trace);
  out.selected = sim.selected;
  int far = sim.selected;
  double far_d = -1;
  for (const auto& e : sim.distances.row(sim.target))
    if (e.distance > far_d) {
      far_d = e.distance;
      far = e.source;
    }

  const int tgt = sc.index_of(sim.target);
  const auto scratch = scratch_rewards(cfg, madrl.agents, tgt, cfg.schedule.tl_training_steps);
  auto transfer_from = [&](int source_id) {
    const int src = sc.index_of(source_id);
    const auto tr = madrl.agents[static_cast<std::size_t>(src)].buffer.snapshot();
    return run_transfer(cfg, madrl.agents, tr, src, tgt, scratch);
  };
  auto near = transfer_from(sim.selected);
  const auto far_run = transfer_from(far);
  out.jump_tl = mean(near.tl_rewards, 200);
  out.jump_scratch = mean(near.scratch_rewards, 200);
  out.gain_near = mean(near.gain, 200);
  out.gain_far = mean(far_run.gain, 200);

  const auto k = static_cast<std::size_t>(sc.cell_count());
  out.eval_baseline = evaluate(cfg, std::vector<td3::Controller>(k));
  std::vector<td3::Controller> frozen;
  for (auto& a : madrl.agents) frozen.push_back(td3::Controller::frozen(a));
  out.eval_madrl = evaluate(cfg, frozen);
  frozen[static_cast<std::size_t>(tgt)] = td3::Controller::frozen(near.target);
  out.eval_tl = evaluate(cfg, frozen);
  std::printf("     seed %llu: source %d (far %d), first-200 TL %.3f scratch %.3f, gain near %.3f far %.3f, "
              "eval baseline %.3f MADRL %.3f TL %.3f\n",
              static_cast<unsigned long long>(seed), out.selected, far, out.jump_tl, out.jump_scratch, out.gain_near,
              out.gain_far, out.eval_baseline, out.eval_madrl, out.eval_tl);
  std::fflush(stdout);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config_dir = argc > 1 ? fs::path(argv[1]) : fs::path("configs");
  std::mt19937_64 rng(2024);

  report(1, "simplified latent distance agrees with exact KL", [&] {
    std::normal_distribution<double> g(0.0, 1e-3);
    double worst = 0;
    const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(4, 1e-4);
    for (int i = 0; i < 10000; ++i) {
      const Eigen::VectorXd a = Eigen::VectorXd::NullaryExpr(4, [&] { return g(rng); });
      const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(4, [&] { return g(rng); });
      const double exact = similarity::kl_gaussian(a, sigma, b, sigma);
      const double simple = similarity::kl_mean_simplified(a, b, 1e-4);
      worst = std::max(worst, std::abs(exact - simple) / simple);
    }
    return Outcome{worst < 1e-6, fmt("max relative error %.3g over 1e4 pairs", worst)};
  });

  report(2, "Gaussian KL identities", [&] {
    std::uniform_real_distribution<double> mu(-3, 3), sd(1e-3, 5);
    bool self_zero = true, nonneg = true;
    for (int i = 0; i < 10000; ++i) {
      const Eigen::VectorXd mp = Eigen::VectorXd::NullaryExpr(4, [&] { return mu(rng); });
      const Eigen::VectorXd sp = Eigen::VectorXd::NullaryExpr(4, [&] { return sd(rng); });
      const Eigen::VectorXd mq = Eigen::VectorXd::NullaryExpr(4, [&] { return mu(rng); });
      const Eigen::VectorXd sq = Eigen::VectorXd::NullaryExpr(4, [&] { return sd(rng); });
      self_zero = self_zero && similarity::kl_gaussian(mp, sp, mp, sp) == 0.0;
      nonneg = nonneg && similarity::kl_gaussian(mp, sp, mq, sq) >= 0.0;
    }
    const double half = similarity::kl_gaussian(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1),
                                                Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1));
    const bool ok = self_zero && nonneg && std::abs(half - 0.5) <= 1e-12;
    return Outcome{ok, fmt("KL(p,p)=0 %s, N(0,1)||N(1,1)=%.15g, non-negative %s", self_zero ? "yes" : "no", half,
                           nonneg ? "yes" : "no")};
  });

  report(3, "backprop matches central differences", [&] {
    const td3::Td3Agent agent(1, td3::Td3Config{}, 3);
    similarity::VaeConfig vc;
    vc.epochs = 0;
    vc.min_samples = 1;
    std::vector<similarity::DefaultSample> s(4);
    for (auto& x : s) x.x = Eigen::VectorXd::Random(17);
    const auto vae = similarity::vae_train(s, vc, 4).model;
    const double ea = fd_error(agent.actor, 5), ec = fd_error(agent.critic1, 6);
    const double ee = fd_error(vae.encoder, 7), ed = fd_error(vae.decoder, 8);
    const double worst = std::max({ea, ec, ee, ed});
    return Outcome{worst < 1e-4, fmt("actor %.2g, critic %.2g, encoder %.2g, decoder %.2g", ea, ec, ee, ed)};
  });

  report(4, "reward range and action simplex validity", [&] {
    const auto reqs = requirement_group_a();
    std::uniform_real_distribution<double> thr(0, 10), del(0, 25), st(-5, 5);
    std::uniform_int_distribution<int> ues(0, 32);
    bool reward_ok = true, action_ok = true;
    for (int i = 0; i < 100000; ++i) {
      std::vector<SliceMetrics> m(4);
      for (auto& x : m) {
        x.throughput = thr(rng);
        x.delay = del(rng);
        x.ue_count = ues(rng);
      }
      const double r = reward(m, reqs);
      reward_ok = reward_ok && r >= 0.0 && r <= 1.0;
    }
    const td3::Td3Agent agent(1, td3::Td3Config{}, 9);
    td3::Rng arng(10);
    for (int i = 0; i < 100000; ++i) {
      const Eigen::VectorXd s = Eigen::VectorXd::NullaryExpr(16, [&] { return st(rng); });
      const auto a = i % 4 == 3 ? td3::random_action(4, arng) : td3::select_action(agent, s, i % 2 == 0, arng, 0.3);
      const std::vector<double> d{thr(rng), thr(rng), thr(rng), i % 5 == 0 ? 0.0 : thr(rng)};
      action_ok = action_ok && PartitionAction::is_valid(a.shares()) && PartitionAction::is_valid(baseline_action(d).shares());
    }
    return Outcome{reward_ok && action_ok, fmt("1e5 rewards in [0,1]: %s; 1e5 actions on the simplex: %s",
                                               reward_ok ? "yes" : "no", action_ok ? "yes" : "no")};
  });

  report(5, "critic matches value iteration on a two-state chain", [&] {
    td3::Td3Config cfg;
    cfg.state_dim = 2;
    cfg.action_dim = 2;
    cfg.actor_lr = 0.0;
    cfg.logit_penalty = 0.0;
    cfg.target_noise = 0.0;
    cfg.gamma = 0.1;
    cfg.tau = 0.02;
    cfg.policy_delay = 1;
    td3::Td3Agent agent(1, cfg, 14);
    const double base[2] = {1.0, 0.0};
    const Eigen::VectorXd states[2] = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
    td3::Rng trng(15);
    for (int i = 0; i < 2000; ++i) {
      const int s = i % 2;
      td3::Transition t{states[s], td3::random_action(2, trng), 0.0, states[1 - s], 1};
      t.reward = base[s] + t.action[0];
      agent.buffer.push(std::move(t));
    }
    for (int i = 0; i < 5000; ++i) td3::train_step(agent);
    double pi0[2], v[2] = {0, 0};
    for (int s = 0; s < 2; ++s) pi0[s] = agent.actor.predict(states[s])(0);
    for (int it = 0; it < 200; ++it) {
      const double p0 = v[0], p1 = v[1];
      v[0] = base[0] + pi0[0] + cfg.gamma * p1;
      v[1] = base[1] + pi0[1] + cfg.gamma * p0;
    }
    double worst = 0;
    for (int s = 0; s < 2; ++s)
      for (double a0 = 0.0; a0 <= 1.0001; a0 += 0.1) {
        Eigen::VectorXd in(4);
        in << states[s], a0, 1 - a0;
        const double q = base[s] + a0 + cfg.gamma * v[1 - s];
        worst = std::max({worst, std::abs(agent.critic1.predict(in)(0) - q), std::abs(agent.critic2.predict(in)(0) - q)});
      }
    return Outcome{worst < 1e-2, fmt("max |Q - Q*| = %.2e after 5000 updates", worst)};
  });

  report(6, "latent distances separate the requirement groups (12 cells)", [&] {
    auto cfg = load_config(config_dir / "twelve_cell.json");
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
      cfg.seed = seed;
      const std::vector<td3::Controller> defaults(12, td3::Controller::fixed_action(PartitionAction::equal(4)));
      const auto trace = run_policies(cfg.scenario, seed, defaults, cfg.schedule.default_action_steps);
      const auto r = run_similarity(cfg, trace);
      double sum[2][2] = {}, cnt[2][2] = {};  // [target group][same group?]
      for (const auto& e : r.distances.entries) {
        const int tg = cfg.scenario.cell(e.target).group == "A" ? 0 : 1;
        const int same = cfg.scenario.cell(e.source).group == cfg.scenario.cell(e.target).group ? 1 : 0;
        sum[tg][same] += e.distance;
        cnt[tg][same] += 1;
      }
      const double ia = sum[0][1] / cnt[0][1], xa = sum[0][0] / cnt[0][0];
      const double ib = sum[1][1] / cnt[1][1], xb = sum[1][0] / cnt[1][0];
      ok = ok && ia < xa && ib < xb;
      detail += fmt("seed %llu A %.3g<%.3g B %.3g<%.3g; ", static_cast<unsigned long long>(seed), ia, xa, ib, xb);
    }
    return Outcome{ok, detail + "intra < inter"};
  });

  std::vector<SeedRun> runs;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::printf("     three-cell runs, seeds 1-5 (full schedule)\n");
  for (auto seed : seeds) {
    try {
      runs.push_back(three_cell_run(config_dir, seed));
    } catch (const std::exception& e) {
      std::printf("     seed %llu failed: %s\n", static_cast<unsigned long long>(seed), e.what());
    }
  }
  const bool all_runs = runs.size() == seeds.size();

  report(7, "the configuration clone is selected as source", [&] {
    int hits = 0;
    for (const auto& r : runs) hits += r.selected == 1;
    return Outcome{all_runs && hits == static_cast<int>(runs.size()),
                   fmt("cell 1 selected for target 3 in %d/%zu seeds", hits, seeds.size())};
  });

  report(8, "transfer jumpstart over scratch training", [&] {
    int ok = 0;
    double worst = 1e9;
    for (const auto& r : runs) {
      const double rel = (r.jump_tl - r.jump_scratch) / r.jump_scratch;
      worst = std::min(worst, rel);
      ok += rel >= 0.10;
    }
    return Outcome{all_runs && ok == static_cast<int>(runs.size()),
                   fmt("first-200-step TL over scratch >= +10%% in %d/%zu seeds (worst %+.0f%%)", ok, seeds.size(),
                       100 * worst)};
  });

  report(9, "nearer source gives at least the gain of the farther one", [&] {
    int ok = 0;
    for (const auto& r : runs) ok += r.gain_near >= r.gain_far;
    return Outcome{all_runs && ok == static_cast<int>(runs.size()),
                   fmt("near >= far in %d/%zu seeds", ok, seeds.size())};
  });

  report(10, "after convergence TL >= MADRL >= baseline, TL > baseline", [&] {
    std::vector<double> b, m, t;
    for (const auto& r : runs) {
      b.push_back(r.eval_baseline);
      m.push_back(r.eval_madrl);
      t.push_back(r.eval_tl);
    }
    const double mb = mean(b), mm = mean(m), mt = mean(t);
    return Outcome{all_runs && mt >= mm && mm >= mb && mt > mb,
                   fmt("mean satisfaction over %zu seeds: TL %.4f, MADRL %.4f, baseline %.4f", runs.size(), mt, mm, mb)};
  });

  report(11, "identical seeds give identical artifacts; checkpoints round-trip", [&] {
    const auto root = fs::temp_directory_path() / "netslice_acceptance";
    fs::remove_all(root);
    auto cfg = load_config(config_dir / "three_cell.json");
    cfg.schedule.exploration_steps = 400;
    cfg.schedule.training_steps = 300;
    cfg.schedule.evaluation_steps = 50;
    stage_train(cfg, root / "a");
    stage_train(cfg, root / "b");
    const bool same = slurp(root / "a" / "train" / "metrics.csv") == slurp(root / "b" / "train" / "metrics.csv");
    const auto agent = td3::load_agent(root / "a" / "train" / "agents" / "cell_1.ckpt");
    td3::save_agent(agent, root / "again.ckpt");
    const bool ckpt = slurp(root / "again.ckpt") == slurp(root / "a" / "train" / "agents" / "cell_1.ckpt");
    const auto buf = td3::load_transitions(root / "a" / "train" / "buffers" / "cell_1.nsrb");
    td3::ReplayBuffer rb(agent.config.buffer_capacity, 1);
    for (const auto& t : buf) rb.push(t);
    td3::save_buffer(rb, root / "again.nsrb");
    const bool buffer = slurp(root / "again.nsrb") == slurp(root / "a" / "train" / "buffers" / "cell_1.nsrb");
    fs::remove_all(root);
    return Outcome{same && ckpt && buffer, fmt("metrics.csv identical %s, checkpoint bytes %s, buffer bytes %s",
                                               same ? "yes" : "no", ckpt ? "yes" : "no", buffer ? "yes" : "no")};
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
