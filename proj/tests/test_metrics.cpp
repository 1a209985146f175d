#include "helpers.hpp"
#include "oracles.hpp"
#include "scenforge/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace scenforge;
using scenforge::testing::agent;

namespace {

// ego driving at 10 m/s, one static agent at (x, y); optional collision record
Rollout episode(double x, double y, bool collided = false, ImpactClass impact = ImpactClass::none, int frames = 10) {
  Rollout r;
  for (int k = 0; k < frames; ++k) {
    r.frames.push_back({agent(0, 2.0 * k, 0, 10, 0, true), agent(1, x, y, 0)});
    if (k > 0) r.actions.push_back({0.5, 0.0});
  }
  r.terminated_at = frames - 1;
  r.collided = collided;
  r.impact = impact;
  if (collided) {
    r.collided_with = 1;
    r.rel_vel = 10.0;
    r.events.push_back({frames - 1, EventKind::collision, impact, {0, 1}, 10.0});
  }
  return r;
}

void offroad(Rollout& r, int agent_id, std::vector<int> steps) {
  for (int s : steps) r.events.push_back({s, EventKind::offroad, ImpactClass::none, {agent_id}, 1.0});
}

}  // namespace

TEST_CASE("collision rate and impact partition") {
  std::vector<Rollout> b{episode(100, 50), episode(100, 50), episode(100, 50),
                         episode(19, 0, true, ImpactClass::front)};
  const MetricsReport m = safety_metrics(b);
  CHECK(m.cfr == 0.25);
  CHECK(m.front + m.side + m.rir == doctest::Approx(m.cfr).epsilon(1e-12));
  REQUIRE(m.rel_vel);
  CHECK(*m.rel_vel == 10.0);
  CHECK(m.m_acc == doctest::Approx(0.5));

  const std::vector<Rollout> safe{episode(100, 50)};
  CHECK_FALSE(safety_metrics(safe).rel_vel);
  CHECK(safety_metrics(safe).ttc_cost == 0.0);
}

TEST_CASE("minimum distance to collision") {
  CHECK(episode_min_dtc(episode(19, 0, true, ImpactClass::front)) == 0.0);
  // static car 6 m to the side of the ego path: gap 6 - 1.8
  CHECK(episode_min_dtc(episode(10, 6)) == doctest::Approx(4.2));
}

TEST_CASE("ttc cost counts close approaches") {
  // the ego ends 4 m behind the car's center while closing at 10 m/s
  const Rollout r = episode(22.5, 0);
  CHECK(episode_ttc_cost(r) > 0.0);
  CHECK(episode_ttc_cost(r) <= 1.0);
}

TEST_CASE("off-road rate with debounce") {
  std::vector<Rollout> b(10, episode(100, 50));
  CHECK(validity_metrics(b) == 0.0);
  offroad(b[3], 1, {4, 5, 6});
  CHECK(validity_metrics(b) == doctest::Approx(0.10));
  offroad(b[5], 1, {2});
  offroad(b[6], 1, {2, 3, 5, 6});
  CHECK(validity_metrics(b) == doctest::Approx(0.10));
}

TEST_CASE("batch metrics are permutation invariant") {
  std::vector<Rollout> b;
  for (int i = 0; i < 9; ++i) b.push_back(episode(30 + i, i % 3, i % 4 == 0, ImpactClass::side));
  offroad(b[2], 1, {1, 2, 3});
  const MetricsReport ref = safety_metrics(b);
  const double aor = validity_metrics(b);
  std::mt19937_64 rng(4);
  for (int n = 0; n < 20; ++n) {
    std::shuffle(b.begin(), b.end(), rng);
    CHECK(safety_metrics(b).cfr == ref.cfr);
    CHECK(validity_metrics(b) == aor);
  }
}

TEST_CASE("wasserstein distance") {
  CHECK(wasserstein1({0.0}, {3.0}) == 3.0);
  CHECK(wasserstein1({1, 2, 3}, {3, 2, 1}) == 0.0);
  CHECK(wasserstein1({0, 0}, {1, 1, 1}) == doctest::Approx(1.0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5, 5);
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t m = 1; m <= 6; ++m) {
      if (std::lcm(n, m) > 8) continue;
      for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> a(n), b(m);
        for (double& v : a) v = u(rng);
        for (double& v : b) v = u(rng);
        CHECK(wasserstein1(a, b) == doctest::Approx(testing::w1_bruteforce(a, b)).epsilon(1e-12));
      }
    }
}

TEST_CASE("realism score") {
  KinematicSamples ref{{1, 2, 3, 4, 5}, {0, 0.5, 1, 1.5, 2}, {-1, 0, 0, 0, 1}};
  CHECK(realism_score(ref, ref) == 1.0);
  CHECK(iqr_scale(ref.speed) == doctest::Approx(2.0));
  // shift every statistic by its IQR: mean W1 / s = 1
  KinematicSamples sim = ref;
  for (double& v : sim.speed) v += 2.0;
  for (double& v : sim.accel) v += 1.0;
  for (double& v : sim.lat_accel) v += iqr_scale(ref.lat_accel);
  CHECK(realism_score(sim, ref) == doctest::Approx(std::exp(-1.0)));
  KinematicSamples worse = sim;
  for (double& v : worse.speed) v += 1.0;
  CHECK(realism_score(worse, ref) < realism_score(sim, ref));
}

TEST_CASE("report serialization") {
  const std::vector<Rollout> b{episode(19, 0, true, ImpactClass::rear), episode(100, 50)};
  const MetricsReport m = evaluate(b);
  const auto j = report_to_json(m);
  CHECK(j.at("CFR") == 0.5);
  CHECK(j.at("RIR") == 0.5);
  CHECK(j.at("REAL").is_null());
  const std::string header = report_csv_header(), row = report_csv_row(m);
  CHECK(row.find('\n') == std::string::npos);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
}
