#include "helpers.hpp"
#include "scenforge/scenegen.hpp"
#include "scenforge/simloop.hpp"

#include <doctest.h>

#include <cmath>

using namespace scenforge;
using scenforge::testing::agent;
using scenforge::testing::constant_velocity;

namespace {

Scene road(std::vector<AgentState> others, int horizon = 30) {
  Scene sc;
  sc.map = testing::straight_map(2, 500.0, 4.0);
  sc.horizon_steps = horizon;
  sc.agents = {agent(0, 20, 0, 10, 0, true)};
  for (auto& a : others) sc.agents.push_back(a);
  validate(sc);
  return sc;
}

}  // namespace

TEST_CASE("idm acceleration hand values") {
  EgoPolicyParams p;
  p.v0 = 15;
  p.T_h = 1.5;
  p.s0 = 2;
  p.a = 2;
  p.b = 2;
  const double expect = 2.0 * (1.0 - std::pow(10.0 / 15.0, 4) - std::pow(17.0 / 20.0, 2));
  CHECK(idm_accel(10, 20, 0, p) == doctest::Approx(expect));
  CHECK(expect == doctest::Approx(0.16).epsilon(0.01));
  CHECK(std::abs(idm_accel(15, 1e9, 0, p)) < 1e-9);
  CHECK(idm_accel(0, 2, 0, p) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(idm_accel(10, 0.0, 10, p, 8.0) == -8.0);
}

TEST_CASE("policy vector round trip and validation") {
  EgoPolicyParams p;
  std::vector<double> v = p.vector();
  CHECK(v.size() == 5);
  v[1] = 1.8;
  p.set_vector(v);
  CHECK(p.T_h == 1.8);
  CHECK(policy_from_json(policy_to_json(p)).vector() == p.vector());
  EgoPolicyParams bad = p;
  bad.b = 0.0;
  CHECK_THROWS_AS(validate(bad), Error);
  EgoPolicyParams lg;
  lg.kind = PolicyKind::lane_graph;
  CHECK(lg.vector().size() == 4);
  CHECK(policy_kind_from_string("lane_graph") == PolicyKind::lane_graph);
}

TEST_CASE("leader search") {
  const Scene sc = road({agent(1, 45, 0, 6), agent(2, 35, 4, 6), agent(3, 10, 0, 6)});
  const std::vector<AgentState> others(sc.agents.begin() + 1, sc.agents.end());
  const Leader l = find_leader(sc.ego(), 0, sc.map, others);
  CHECK(l.agent_id == 1);
  CHECK(l.gap == doctest::Approx(25 - 4.5));
  CHECK(l.dv == doctest::Approx(4));
}

TEST_CASE("crossing agent is treated as a leader") {
  // crosses the ego lane 30 m ahead, arriving together with the ego
  Scene sc = road({});
  sc.map = testing::straight_map(1, 500.0, 4.0);
  AgentState x = agent(1, 50, -30, 10, M_PI / 2);
  const std::vector<AgentState> others{x};
  const Leader c = find_conflict(sc.ego(), 0, sc.map, others, 1.0);
  CHECK(c.agent_id == 1);
  CHECK(c.gap < 30);
  const std::vector<AgentState> late{agent(1, 50, -80, 10, M_PI / 2)};
  CHECK(find_conflict(sc.ego(), 0, sc.map, late, 1.0).agent_id == -1);
}

TEST_CASE("lane graph policy rules") {
  const Scene sc = road({});
  EgoPolicyParams p;
  p.kind = PolicyKind::lane_graph;
  p.target_speed = 10;
  p.brake_ttc = 2.0;
  const SimConfig cfg;
  const EgoAction free = lane_graph_act(sc.ego(), 0, sc.map, {}, p, cfg);
  CHECK(std::abs(free.steering) < 1e-9);
  CHECK(std::abs(free.accel) < 1e-9);

  AgentState lead = agent(1, 20 + 4.5 + 10, 0, 0);  // 10 m gap closing at 10 m/s
  const std::vector<AgentState> others{lead};
  CHECK(lane_graph_act(sc.ego(), 0, sc.map, others, p, cfg).accel == -cfg.b_max);

  AgentState left = sc.ego();
  left.position.y() = 1.0;
  CHECK(lane_graph_act(left, 0, sc.map, {}, p, cfg).steering < 0.0);
}

TEST_CASE("empty road runs to the horizon") {
  const Scene sc = road({agent(1, 300, 4, 10)});
  const Rollout r = run_closed_loop(sc, constant_velocity(sc), EgoPolicyParams{});
  CHECK(r.events.empty());
  CHECK_FALSE(r.collided);
  CHECK(r.terminated_at == sc.horizon_steps);
  CHECK(r.frames.size() == static_cast<std::size_t>(sc.horizon_steps + 1));
}

TEST_CASE("idm stops for a car parked across the lane") {
  // ego at 10 m/s with 60 m to the obstacle; IDM needs well under that
  AgentState blocker = agent(1, 85, 0, 0, M_PI / 2);
  const Scene sc = road({blocker}, 50);
  const Rollout r = run_closed_loop(sc, constant_velocity(sc), EgoPolicyParams{});
  CHECK_FALSE(r.collided);
  CHECK(r.frames.back()[0].speed < 1.0);
}

TEST_CASE("forced rear-end ends the episode") {
  // 15.5 m bumper gap closing at 15 m/s
  const Scene sc = road({agent(1, 0, 0, 25)});
  const Rollout r = run_closed_loop(sc, constant_velocity(sc), EgoPolicyParams{});
  REQUIRE(r.collided);
  CHECK(r.collided_with == 1);
  CHECK(r.impact == ImpactClass::rear);
  CHECK(r.terminated_at >= 4);
  CHECK(r.terminated_at <= 6);
  CHECK(r.frames.size() == static_cast<std::size_t>(r.terminated_at + 1));
  int ego_hits = 0;
  for (const auto& e : r.events)
    if (e.kind == EventKind::collision) ++ego_hits;
  CHECK(ego_hits == 1);
}

TEST_CASE("impact classes") {
  AgentState ego = agent(0, 0, 0, 10, 0, true);
  CHECK(classify_impact(ego, agent(1, 4, 0, 0)) == ImpactClass::front);
  CHECK(classify_impact(ego, agent(1, -4, 0, 0)) == ImpactClass::rear);
  CHECK(classify_impact(ego, agent(1, 0.5, 1.7, 0)) == ImpactClass::side);
}

TEST_CASE("fuzzed rollouts are deterministic and physically sane") {
  const auto suite = mixed_suite(12, 99);
  const SimConfig cfg;
  for (std::size_t j = 0; j < suite.size(); ++j) {
    const Scene& sc = suite[j].scene;
    Rng rng(mix_seed(8, j));
    JointTrajectory env = simulate_traffic(sc, rng);
    for (std::size_t i = 0; i < env.agents(); ++i)
      for (std::size_t h = 0; h < env.steps(); ++h) env.at(i, h) += normal_vector(rng, 2) * 0.5;
    const Rollout a = run_closed_loop(sc, env, EgoPolicyParams{}, cfg);
    const Rollout b = run_closed_loop(sc, env, EgoPolicyParams{}, cfg);
    CHECK(rollout_to_json(a) == rollout_to_json(b));
    CHECK_FALSE(a.invalid);
    for (const auto& f : a.frames) CHECK(f[a.ego_index].speed >= 0.0);
    for (const auto& act : a.actions) CHECK(std::abs(act.accel) <= cfg.b_max + 1e-9);
    for (const auto& e : a.events) {
      CHECK(e.step >= 0);
      CHECK(e.step <= a.terminated_at);
    }
    if (a.collided) CHECK(a.impact != ImpactClass::none);
  }
}

TEST_CASE("background traffic stays on the road") {
  const auto suite = mixed_suite(9, 5);
  for (std::size_t j = 0; j < suite.size(); ++j) {
    Rng rng(j);
    const JointTrajectory t = simulate_traffic(suite[j].scene, rng);
    CHECK(t.all_finite());
    for (std::size_t i = 0; i < t.agents(); ++i)
      for (std::size_t h = 0; h < t.steps(); ++h) CHECK(suite[j].scene.map.signed_offroad_distance(t.at(i, h)) <= 0.5);
  }
}

TEST_CASE("first contact is shallow") {
  const AgentState e0 = agent(0, 0, 0, 10, 0, true), o0 = agent(1, -6, 0, 25);
  const AgentState e1 = agent(0, 2, 0, 10, 0, true), o1 = agent(1, -1, 0, 25);
  const auto [ce, co] = first_contact(e0, o0, e1, o1);
  CHECK(box_contact(ce, co).depth < 1e-6);
  CHECK(classify_impact(ce, co) == ImpactClass::rear);
}
