#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "netslice/env.hpp"
#include "netslice/scenario.hpp"

using namespace netslice;

namespace {

CellConfig two_neighbor_cell() {
  CellConfig c;
  c.cell_id = 1;
  c.bandwidth = 20.0;
  c.base_snr_db = 20.0;
  c.neighbor_ids = {2, 3};
  c.interference_gains = {1.5, 0.5};
  c.requirements = requirement_group_a();
  return c;
}

Scenario flat_scenario(int cells) {
  Scenario s = reference_template();
  for (auto& m : s.masks) m.amplitude = 0.0;
  s.mask_noise_std = 0.0;
  for (int id = 1; id <= cells; ++id) {
    CellConfig c;
    c.cell_id = id;
    c.requirements = requirement_group_b();
    for (int o = 1; o <= cells; ++o)
      if (o != id) {
        c.neighbor_ids.push_back(o);
        c.interference_gains.push_back(1.0);
      }
    s.cells.push_back(c);
  }
  return s;
}

SliceMetrics metric(double thr, double delay, int ues = 5) {
  SliceMetrics m;
  m.throughput = thr;
  m.delay = delay;
  m.ue_count = ues;
  return m;
}

}  // namespace

TEST_CASE("traffic mask is periodic and clipped") {
  MaskParams m{0.5, 0.3, 200.0, 0.7};
  for (int t : {0, 13, 150, 377}) CHECK(traffic_mask(t, m) == doctest::Approx(traffic_mask(t + 200, m)).epsilon(1e-12));
  CHECK(traffic_mask(0, MaskParams{0.9, 0.5, 100.0, std::numbers::pi / 2}) == 1.0);
  CHECK(traffic_mask(0, MaskParams{0.1, 0.5, 100.0, -std::numbers::pi / 2}) == 0.0);
  CHECK(traffic_mask(50, m, 0.05) == doctest::Approx(std::clamp(0.5 + 0.3 * std::sin(2 * std::numbers::pi * 0.25 + 0.7) + 0.05, 0.0, 1.0)));
}

TEST_CASE("efficiency follows the load-coupled Shannon form") {
  const auto c = two_neighbor_cell();
  const std::vector<double> loads{0.4, 0.8};
  const double expected = std::log2(1.0 + 100.0 / (1.0 + 1.5 * 0.4 + 0.5 * 0.8));
  CHECK(compute_efficiency(c, loads) == doctest::Approx(expected).epsilon(1e-14));
  const std::vector<double> idle{0.0, 0.0};
  CHECK(compute_efficiency(c, idle) == doctest::Approx(std::log2(101.0)).epsilon(1e-14));
  const std::vector<double> wrong{0.1};
  CHECK_THROWS_AS(compute_efficiency(c, wrong), DimensionError);
}

TEST_CASE("efficiency strictly decreases in every neighbour load") {
  const auto c = two_neighbor_cell();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 0.95);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> loads{u(rng), u(rng)};
    const double base = compute_efficiency(c, loads);
    for (std::size_t j = 0; j < 2; ++j) {
      auto more = loads;
      more[j] += 0.05;
      CHECK(compute_efficiency(c, more) < base);
    }
  }
}

TEST_CASE("slice metrics match hand-computed values") {
  auto c = two_neighbor_cell();
  const PartitionAction a(Eigen::Vector4d(0.4, 0.3, 0.2, 0.1));
  const double eff = 2.0;  // capacities 16, 12, 8, 4 Mbit/s
  const std::vector<double> demand{8.0, 12.0, 10.0, 0.0};
  const std::vector<int> ues{4, 3, 5, 0};
  const auto m = compute_slice_metrics(c, a, demand, ues, eff);
  CHECK(m[0].load == doctest::Approx(0.5));
  CHECK(m[0].throughput == doctest::Approx(2.0));
  CHECK(m[0].delay == doctest::Approx(1.0));
  CHECK(m[1].load == doctest::Approx(1.0));
  CHECK(m[1].delay == doctest::Approx(10.0));  // 0.5 / 0.05
  CHECK(m[2].load == 1.0);
  CHECK(m[2].throughput == doctest::Approx(8.0 / 5.0));
  CHECK(m[3].load == 0.0);
  CHECK(m[3].throughput == 0.0);
  CHECK(m[3].delay == 0.5);

  const PartitionAction starve(Eigen::Vector4d(1.0, 0.0, 0.0, 0.0));
  const auto s = compute_slice_metrics(c, starve, demand, ues, eff);
  CHECK(s[1].load == 1.0);
  CHECK(s[1].throughput == 0.0);
  CHECK(s[1].delay == 20.0);
}

TEST_CASE("slice metrics stay inside their ranges") {
  auto c = two_neighbor_cell();
  std::mt19937_64 rng(11);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  for (int i = 0; i < 2000; ++i) {
    Eigen::Vector4d w(ex(rng), ex(rng), ex(rng), ex(rng));
    const PartitionAction a(w / w.sum());
    std::vector<double> d{u(rng), u(rng), u(rng), i % 7 == 0 ? 0.0 : u(rng)};
    std::vector<int> ues{1 + i % 9, i % 4, 3, 7};
    for (const auto& m : compute_slice_metrics(c, a, d, ues, 0.5 + u(rng) / 10)) {
      CHECK(m.load >= 0.0);
      CHECK(m.load <= 1.0);
      CHECK(m.delay >= 0.5);
      CHECK(m.delay <= 20.0);
      CHECK(m.throughput >= 0.0);
      CHECK(m.throughput <= m.demand + 1e-12);
    }
  }
}

TEST_CASE("permuting slices permutes the metrics") {
  auto c = two_neighbor_cell();
  const Eigen::Vector4d w(0.1, 0.2, 0.3, 0.4);
  const std::vector<double> d{3.0, 9.0, 2.0, 14.0};
  const std::vector<int> u{2, 3, 1, 7};
  const std::array<int, 4> perm{2, 0, 3, 1};
  Eigen::Vector4d wp;
  std::vector<double> dp(4);
  std::vector<int> up(4);
  for (int i = 0; i < 4; ++i) {
    wp(i) = w(perm[i]);
    dp[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(perm[i])];
    up[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(perm[i])];
  }
  const auto m = compute_slice_metrics(c, PartitionAction(w), d, u, 1.7);
  const auto mp = compute_slice_metrics(c, PartitionAction(wp), dp, up, 1.7);
  for (int i = 0; i < 4; ++i) CHECK(mp[static_cast<std::size_t>(i)] == m[static_cast<std::size_t>(perm[i])]);
}

TEST_CASE("reward boundary cases") {
  const auto req = requirement_group_a();
  std::vector<SliceMetrics> exact{metric(4, 3), metric(3, 2), metric(2, 1), metric(1, 1)};
  CHECK(reward(exact, req) == 1.0);

  auto thr = exact;
  thr[0].throughput = 2.0;
  CHECK(reward(thr, req) == 0.5);

  auto del = exact;
  del[2].delay = 2.0;
  CHECK(reward(del, req) == 0.5);

  auto better = exact;
  for (auto& m : better) {
    m.throughput *= 3;
    m.delay /= 3;
  }
  CHECK(reward(better, req) == 1.0);

  auto empty = thr;
  empty[0].ue_count = 0;
  CHECK(reward(empty, req) == 1.0);
}

TEST_CASE("reward stays in the unit interval on fuzzed metrics") {
  const auto req = requirement_group_b();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> thr(0.0, 10.0), del(0.0, 25.0);
  std::uniform_int_distribution<int> ues(0, 32);
  for (int i = 0; i < 100000; ++i) {
    std::vector<SliceMetrics> m{metric(thr(rng), del(rng), ues(rng)), metric(thr(rng), del(rng), ues(rng)),
                                metric(thr(rng), del(rng), ues(rng)), metric(thr(rng), del(rng), ues(rng))};
    const double r = reward(m, req);
    REQUIRE(r >= 0.0);
    REQUIRE(r <= 1.0);
  }
}

TEST_CASE("baseline action is proportional to demand") {
  const std::vector<double> even{1, 1, 1, 1};
  CHECK(baseline_action(even) == PartitionAction::equal(4));
  const std::vector<double> skewed{3, 1, 0, 0};
  const auto a = baseline_action(skewed);
  CHECK(a[0] == 0.75);
  CHECK(a[1] == 0.25);
  CHECK(a[2] == 0.0);
  const std::vector<double> none{0, 0, 0, 0};
  CHECK(baseline_action(none) == PartitionAction::equal(4));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> d{u(rng), u(rng), u(rng), u(rng)};
    const auto b = baseline_action(d);
    CHECK(PartitionAction::is_valid(b.shares()));
    const double total = d[0] + d[1] + d[2] + d[3];
    for (int n = 0; n < 4; ++n) CHECK(b[n] == doctest::Approx(d[static_cast<std::size_t>(n)] / total).epsilon(1e-12));
  }
}

TEST_CASE("partition actions reject points off the simplex") {
  CHECK_THROWS_AS(PartitionAction(Eigen::Vector4d(0.5, 0.5, 0.1, 0.0)), ActionError);
  CHECK_THROWS_AS(PartitionAction(Eigen::Vector4d(1.2, -0.2, 0.0, 0.0)), ActionError);
  CHECK_THROWS_AS(PartitionAction(Eigen::Vector4d(std::nan(""), 1.0, 0.0, 0.0)), ActionError);
  CHECK_NOTHROW(PartitionAction(Eigen::Vector4d(0.25, 0.25, 0.25, 0.25 + 5e-10)));
}

TEST_CASE("scenario validation catches inconsistent topologies") {
  auto s = flat_scenario(3);
  CHECK_NOTHROW(validate(s));
  auto asym = s;
  asym.cells[0].neighbor_ids = {2};
  asym.cells[0].interference_gains = {1.0};
  CHECK_THROWS_AS(validate(asym), ConfigError);
  auto self = s;
  self.cells[1].neighbor_ids[0] = 2;
  CHECK_THROWS_AS(validate(self), ConfigError);
  auto gains = s;
  gains.cells[2].interference_gains[0] = -1.0;
  CHECK_THROWS_AS(validate(gains), ConfigError);
  auto bw = s;
  bw.cells[0].bandwidth = 0.0;
  CHECK_THROWS_AS(validate(bw), ConfigError);
  CHECK_THROWS_AS(s.index_of(42), ConfigError);
}

TEST_CASE("traffic is a pure function of seed, cell and step") {
  const auto s = twelve_cell_scenario();
  const auto a = slice_traffic(s, 7, 4, 123);
  const auto b = slice_traffic(s, 7, 4, 123);
  CHECK(a.ue_counts == b.ue_counts);
  CHECK(a.demands == b.demands);
  for (int n = 0; n < 4; ++n) {
    CHECK(a.ue_counts[static_cast<std::size_t>(n)] >= 0);
    CHECK(a.ue_counts[static_cast<std::size_t>(n)] <= 32);
    CHECK(a.demands[static_cast<std::size_t>(n)] ==
          doctest::Approx(a.ue_counts[static_cast<std::size_t>(n)] * s.demand_per_ue[static_cast<std::size_t>(n)]));
  }
  auto quiet = s;
  quiet.mask_noise_std = 0.0;
  const auto q = slice_traffic(quiet, 1, 0, 40);
  for (int n = 0; n < 4; ++n) {
    const auto& m = quiet.masks[static_cast<std::size_t>(n)];
    MaskParams shifted = m;
    shifted.phase += quiet.cells[0].mask_phase;
    CHECK(q.ue_counts[static_cast<std::size_t>(n)] == std::lround(32 * traffic_mask(40, shifted)));
  }
}

TEST_CASE("network stepping is deterministic and validates actions") {
  const auto s = three_cell_scenario();
  std::vector<PartitionAction> acts(3, PartitionAction(Eigen::Vector4d(0.4, 0.3, 0.2, 0.1)));
  auto x = init_network(s, 5);
  auto y = init_network(s, 5);
  CHECK(x == y);
  for (int t = 0; t < 50; ++t) {
    auto rx = step(x, acts, s);
    auto ry = step(y, acts, s);
    CHECK(rx.rewards == ry.rewards);
    x = std::move(rx.state);
    y = std::move(ry.state);
  }
  CHECK(x == y);
  CHECK(x.step == 50);
  std::vector<PartitionAction> short_acts(2, PartitionAction::equal(4));
  CHECK_THROWS_AS(step(x, short_acts, s), ActionError);
  std::vector<PartitionAction> narrow(3, PartitionAction::equal(3));
  CHECK_THROWS_AS(step(x, narrow, s), ActionError);
}

TEST_CASE("neighbour utilisation couples cells through the previous step") {
  auto s = flat_scenario(2);
  for (auto& m : s.masks) m.offset = 0.05;  // light traffic keeps loads below saturation
  auto st = init_network(s, 1);
  // Same traffic and actions; only the neighbour's previous utilisation differs.
  auto busy = st;
  busy.utilization = {0.0, 0.9};
  auto idle = st;
  idle.utilization = {0.0, 0.0};
  std::vector<PartitionAction> acts(2, PartitionAction::equal(4));
  const auto rb = step(busy, acts, s);
  const auto ri = step(idle, acts, s);
  for (int n = 0; n < 4; ++n)
    CHECK(rb.state.per_cell[0][static_cast<std::size_t>(n)].load >=
          ri.state.per_cell[0][static_cast<std::size_t>(n)].load);
  CHECK(rb.state.utilization[0] > ri.state.utilization[0]);
}

TEST_CASE("scenario JSON round-trips and shipped configs equal the presets") {
  for (const auto& s : {three_cell_scenario(), twelve_cell_scenario()}) {
    const auto back = scenario_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
  }
  const std::filesystem::path dir = std::filesystem::path(NETSLICE_SOURCE_DIR) / "configs";
  CHECK(to_json(load_scenario(dir / "three_cell_scenario.json")) == to_json(three_cell_scenario()));
  CHECK(to_json(load_scenario(dir / "twelve_cell_scenario.json")) == to_json(twelve_cell_scenario()));
  CHECK_THROWS_AS(scenario_from_json(nlohmann::json{{"cells", 3}}), ConfigError);
}

TEST_CASE("the twelve-cell preset has the two requirement groups") {
  const auto s = twelve_cell_scenario();
  REQUIRE(s.cell_count() == 12);
  for (int id : {1, 2, 3, 7, 8, 9}) CHECK(s.cell(id).requirements[0].throughput_target == 4.0);
  for (int id : {4, 5, 6, 10, 11, 12}) {
    CHECK(s.cell(id).requirements[0].throughput_target == 2.5);
    for (const auto& r : s.cell(id).requirements) CHECK(r.delay_target == 1.0);
  }
  CHECK(s.cell(1).requirements[2].delay_target == 1.0);
  CHECK(s.cell(1).requirements[1].delay_target == 2.0);
}
