#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "netslice/scenario.hpp"
#include "netslice/transfer.hpp"

using namespace netslice;
using namespace netslice::td3;
using namespace netslice::transfer;

namespace {

std::vector<Transition> make_transitions(int n, int origin, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Transition> out;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state = Eigen::VectorXd::NullaryExpr(16, [&] { return u(rng); });
    t.next_state = Eigen::VectorXd::NullaryExpr(16, [&] { return u(rng); });
    t.action = random_action(4, rng);
    t.reward = i;  // doubles as an index
    t.origin = origin;
    out.push_back(std::move(t));
  }
  return out;
}

Td3Agent trained_source(int id, std::uint64_t seed, int steps = 20) {
  Td3Agent a(id, Td3Config{}, seed);
  for (auto& t : make_transitions(200, id, seed + 1)) a.buffer.push(t);
  for (int i = 0; i < steps; ++i) train_step(a);
  return a;
}

std::string checkpoint_text(const Td3Agent& a) {
  const auto p = std::filesystem::temp_directory_path() / "netslice_transfer_ckpt.tmp";
  save_agent(a, p);
  std::ifstream is(p);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("model transfer reproduces the source policy exactly") {
  const auto source = trained_source(1, 10);
  Td3Agent target(3, Td3Config{}, 11);
  target.env_steps = 99;
  model_transfer(source, target);
  Rng rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::VectorXd s = Eigen::VectorXd::NullaryExpr(16, [&] { return n(rng); });
    REQUIRE(select_action(target, s, false, rng) == select_action(source, s, false, rng));
  }
  CHECK(target.cell_id == 3);
  CHECK(target.critic2_target == source.critic2_target);
  CHECK(target.train_calls == 0);
  CHECK(target.env_steps == 0);
  CHECK(target.actor_opt.step == 0);
  CHECK(target.buffer.empty());

  Td3Agent again = target;
  model_transfer(source, again);
  CHECK(again.actor == target.actor);
  CHECK(again.critic1 == target.critic1);

  Td3Agent keep(3, Td3Config{}, 11);
  model_transfer(source, keep, false);
  CHECK(keep.actor_opt == source.actor_opt);
}

TEST_CASE("model transfer rejects mismatched architectures") {
  const auto source = trained_source(1, 13, 0);
  Td3Config wide;
  wide.actor_hidden = {64, 24};
  Td3Agent target(2, wide, 14);
  const Net before = target.actor;
  CHECK_THROWS_AS(model_transfer(source, target), IncompatibleArchitectureError);
  CHECK(target.actor == before);
  Td3Config other_state;
  other_state.state_dim = 12;
  Td3Agent t2(2, other_state, 14);
  CHECK_THROWS_AS(model_transfer(source, t2), IncompatibleArchitectureError);
}

TEST_CASE("transfer counts") {
  CHECK(transfer_count(0.5, 1000) == 500);
  CHECK(transfer_count(0.3, 10) == 3);
  CHECK(transfer_count(0.25, 10) == 3);
  CHECK(transfer_count(0.0, 10) == 0);
  CHECK(transfer_count(1.0, 10) == 10);
  CHECK(transfer_count(0.7, 0) == 0);
  CHECK_THROWS_AS(transfer_count(1.5, 10), DomainError);
  CHECK_THROWS_AS(transfer_count(-0.1, 10), DomainError);
}

TEST_CASE("instance transfer conserves and tags transitions") {
  const auto source = make_transitions(1000, 1, 15);
  ReplayBuffer target(20000, 3);
  for (auto t : make_transitions(100, 3, 16)) target.push(t);

  const auto merged = instance_transfer(source, 1, target, 0.5, 17);
  CHECK(merged.size() == 600);
  CHECK(merged.foreign_count() == 500);
  const auto all = merged.snapshot();
  std::set<double> picked;
  double last = -1;
  for (std::size_t i = 100; i < all.size(); ++i) {
    CHECK(all[i].origin == 1);
    CHECK(all[i].reward > last);  // original order kept
    last = all[i].reward;
    picked.insert(all[i].reward);
    CHECK(all[i].state == source[static_cast<std::size_t>(all[i].reward)].state);
  }
  CHECK(picked.size() == 500);
  CHECK(target.size() == 100);  // input untouched

  CHECK(instance_transfer(source, 1, target, 0.0, 17).snapshot() == target.snapshot());
  const auto full = instance_transfer(source, 1, target, 1.0, 17);
  CHECK(full.size() == 1100);
  CHECK(instance_transfer(source, 1, target, 0.5, 17).snapshot() == all);
  CHECK(!(instance_transfer(source, 1, target, 0.5, 18).snapshot() == all));

  ReplayBuffer small(300, 3);
  for (auto t : make_transitions(100, 3, 16)) small.push(t);
  const auto capped = instance_transfer(source, 1, small, 0.5, 17);
  CHECK(capped.size() == 300);
  CHECK(capped.own_count() == 100);
}

TEST_CASE("instance subsampling is uniform over the source") {
  const auto source = make_transitions(20, 1, 19);
  const ReplayBuffer empty(100, 3);
  std::vector<int> hits(20, 0);
  const int runs = 4000;
  for (int r = 0; r < runs; ++r)
    for (const auto& t : instance_transfer(source, 1, empty, 0.25, 1000 + static_cast<std::uint64_t>(r)).snapshot())
      ++hits[static_cast<std::size_t>(t.reward)];
  for (int h : hits) CHECK(h == doctest::Approx(runs * 5 / 20.0).epsilon(0.1));
}

TEST_CASE("feature transfer freezes the copied layers") {
  const auto source = trained_source(1, 20);
  Td3Agent target(3, Td3Config{}, 21);
  CHECK_THROWS_AS(feature_transfer(source, target, 0, 1), DomainError);
  CHECK_THROWS_AS(feature_transfer(source, target, 3, 1), DomainError);
  feature_transfer(source, target, 1, 22);
  CHECK(target.actor.layer(0).weight == source.actor.layer(0).weight);
  CHECK(!target.actor.layer(0).trainable);
  CHECK(target.actor.layer(1).trainable);
  CHECK(target.actor.layer(1).weight != source.actor.layer(1).weight);
  CHECK(target.critic1.layer(0).weight == source.critic1.layer(0).weight);
  CHECK(target.actor_target == target.actor);

  for (auto& t : make_transitions(200, 3, 23)) target.buffer.push(t);
  const auto frozen_actor = target.actor.layer(0);
  const auto frozen_critic = target.critic2.layer(0);
  const auto head = target.actor.layer(2).weight;
  for (int i = 0; i < 100; ++i) train_step(target);
  CHECK(target.actor.layer(0).weight == frozen_actor.weight);
  CHECK(target.actor.layer(0).bias == frozen_actor.bias);
  CHECK(target.critic2.layer(0).weight == frozen_critic.weight);
  CHECK(target.actor.layer(2).weight != head);
}

TEST_CASE("integrated transfer with no instances equals model transfer") {
  const auto source = trained_source(1, 24);
  const auto transitions = source.buffer.snapshot();
  Td3Agent a(3, Td3Config{}, 25), b(3, Td3Config{}, 25);
  TransferPlan plan;
  plan.source = 1;
  plan.target = 3;
  plan.instance_fraction = 0.0;
  integrated_transfer(source, transitions, a, plan);
  model_transfer(source, b);
  CHECK(checkpoint_text(a) == checkpoint_text(b));
  CHECK(a.buffer.snapshot() == b.buffer.snapshot());

  plan.instance_fraction = 1.0;
  plan.skip_leading = 50;
  Td3Agent c(3, Td3Config{}, 25);
  apply_plan(source, transitions, c, plan);
  CHECK(c.buffer.size() == 150);
  CHECK(c.buffer.at(0).reward == 50.0);

  plan.instance_fraction = 2.0;
  CHECK_THROWS_AS(apply_plan(source, transitions, c, plan), DomainError);
  CHECK(parse_strategy("feature") == Strategy::Feature);
  CHECK_THROWS_AS(parse_strategy("distill"), ConfigError);
}

TEST_CASE("instance strategy leaves the target's networks alone") {
  const auto source = trained_source(1, 26);
  Td3Agent t(3, Td3Config{}, 27);
  const Net before = t.actor;
  TransferPlan plan;
  plan.strategy = Strategy::Instance;
  plan.instance_fraction = 0.5;
  apply_plan(source, source.buffer.snapshot(), t, plan);
  CHECK(t.actor == before);
  CHECK(t.buffer.size() == 100);
}

TEST_CASE("fine-tuning in a network slot") {
  const auto scenario = three_cell_scenario();
  const auto source = trained_source(1, 28);
  std::vector<Td3Agent> peers{trained_source(1, 29, 0), trained_source(2, 30, 0)};
  TargetSlot slot{scenario, 5, 2, {Controller::frozen(peers[0]), Controller::frozen(peers[1]), Controller::baseline()}};

  Td3Agent target(3, Td3Config{}, 31);
  model_transfer(source, target);
  const Net before = target.actor;
  const auto none = fine_tune(target, slot, 0);
  CHECK(none.rewards.empty());
  CHECK(target.actor == before);

  Td3Agent t1 = target, t2 = target;
  const auto r1 = fine_tune(t1, slot, 80, 0.1);
  const auto r2 = fine_tune(t2, slot, 80, 0.1);
  CHECK(r1.rewards.size() == 80);
  CHECK(r1.trace.size() == 80);
  CHECK(r1.rewards == r2.rewards);
  CHECK(t1.actor == t2.actor);
  CHECK(!(t1.actor == before));
  CHECK(t1.env_steps == 80);
  CHECK(!r1.diverged);
  for (const auto& s : r1.trace) CHECK(s.phases[2] == Phase::Training);
}
