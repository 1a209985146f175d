#include "helpers.hpp"
#include "scenforge/scenegen.hpp"
#include "scenforge/simloop.hpp"
#include "scenforge/targeting.hpp"

#include <doctest.h>

#include <cmath>

using namespace scenforge;
using scenforge::testing::agent;
using scenforge::testing::constant_velocity;
using scenforge::testing::straight_map;

namespace {

// three lanes 4 m apart, ego on lane 0
Scene three_lane(std::vector<AgentState> others) {
  Scene sc;
  sc.map = straight_map(3, 400.0, 4.0);
  sc.agents = {agent(0, 50, 0, 10, 0, true)};
  for (auto& a : others) sc.agents.push_back(a);
  validate(sc);
  return sc;
}

double max_curvature(std::span<const Vec2> p) {
  double worst = 0.0;
  for (std::size_t h = 1; h + 1 < p.size(); ++h) {
    const Vec2 a = p[h] - p[h - 1], b = p[h + 1] - p[h];
    if (a.norm() < 0.5 || b.norm() < 0.5) continue;
    const double turn = std::abs(std::atan2(a.x() * b.y() - a.y() * b.x(), a.dot(b)));
    worst = std::max(worst, turn / (0.5 * (a.norm() + b.norm())));
  }
  return worst;
}

}  // namespace

TEST_CASE("semantic filter rules") {
  // 1: parked on the far lane well behind; 2: moving, neighboring lane; 3: off road
  Scene sc = three_lane({agent(1, 300, 8, 0), agent(2, 70, 4, 8)});
  AgentState off = agent(3, 60, 0, 5);
  sc.agents.push_back(off);
  const JointTrajectory ref = constant_velocity(sc);
  sc.agents.back().position = Vec2(60, 20);  // moved after validation
  const std::vector<int> cand{1, 2, 3};
  const FeasibilityMask m = semantic_filter(cand, sc, ref);
  CHECK(m.reason.at(1) == Rejection::static_non_blocking);
  CHECK(m.reason.at(2) == Rejection::accepted);
  CHECK(m.reason.at(3) == Rejection::off_drivable);
  CHECK(m.accepted_ids() == std::vector<int>{2});
}

TEST_CASE("stopped car blocking the ego lane is kept") {
  const Scene sc = three_lane({agent(1, 58, 0, 0)});
  const std::vector<int> cand{1};
  CHECK(semantic_filter(cand, sc, constant_velocity(sc)).accepted(1));
}

TEST_CASE("support is the ordered intersection") {
  FeasibilityMask m;
  m.reason = {{1, Rejection::accepted}, {2, Rejection::no_route_conflict}, {3, Rejection::accepted}};
  const std::vector<int> s_top{3, 2, 1, 9};
  CHECK(intersect_support(s_top, m) == std::vector<int>{3, 1});
}

TEST_CASE("skeleton near set and fallback") {
  const Scene sc = three_lane({agent(1, 53, 0, 10), agent(2, 52, 4, 10), agent(3, 51, 8, 10)});
  const std::vector<int> s{3, 2, 1};
  const Skeleton sk = build_skeleton(s, sc, constant_velocity(sc));
  CHECK(sk.near == std::vector<int>{1});
  CHECK(sk.far.empty());
  CHECK(sk.fallback);
  CHECK(sk.coalition == std::vector<int>{1});
  CHECK(sk.chain == std::vector<ChainEdge>{{1, 0}});
  CHECK(sk.mask == std::vector<int>{0, 1, 0, 0});
}

TEST_CASE("far agent on an ego-adjacent lane is not distal") {
  const Scene sc = three_lane({agent(1, 60, 0, 10), agent(2, 100, 4, 10)});
  const std::vector<int> s{1, 2};
  const Skeleton sk = build_skeleton(s, sc, constant_velocity(sc));
  CHECK(sk.near == std::vector<int>{1});
  CHECK(sk.far.empty());
  CHECK(sk.fallback);
}

TEST_CASE("distal chain through an intermediate") {
  // far agent on lane 2, 45 m from the primary: too far for a direct link,
  // reachable through the agent between them
  const Scene sc = three_lane({agent(1, 60, 0, 10), agent(2, 80, 8, 10), agent(3, 105, 8, 10)});
  const std::vector<int> s{1, 2, 3};
  const Skeleton sk = build_skeleton(s, sc, constant_velocity(sc));
  CHECK(sk.near == std::vector<int>{1});
  CHECK(sk.far == std::vector<int>{3});
  CHECK(sk.intermediates == std::vector<int>{2});
  CHECK_FALSE(sk.fallback);
  CHECK(sk.coalition == std::vector<int>{1, 2, 3});
  int to_ego = 0;
  for (const auto& e : sk.chain) to_ego += e.to == 0;
  CHECK(to_ego == 1);
  CHECK(sk.chain.back() == ChainEdge{1, 0});
}

TEST_CASE("empty support is rejected") {
  const Scene sc = three_lane({agent(1, 60, 0, 10)});
  CHECK_THROWS_WITH_AS(build_skeleton(std::vector<int>{}, sc, constant_velocity(sc)), "no feasible adversaries", Error);
}

TEST_CASE("mask is idempotent and zero off the coalition") {
  const Scene sc = three_lane({agent(1, 60, 0, 10), agent(2, 52, 4, 10)});
  const Skeleton sk = build_skeleton(std::vector<int>{1}, sc, constant_velocity(sc));
  Rng rng(1);
  const Eigen::VectorXd v = normal_vector(rng, 3 * 5);
  const Eigen::VectorXd m = apply_mask(sk, v, 5);
  CHECK(apply_mask(sk, m, 5) == m);
  CHECK(m.segment(0, 5).isZero(0));
  CHECK(m.segment(5, 5) == v.segment(5, 5));
  CHECK(m.segment(10, 5).isZero(0));
}

TEST_CASE("anchor merges a neighbor into the target lane") {
  // attacker on lane 1 behind-left of the ego; the ego is its target
  Scene sc = three_lane({agent(1, 40, 4, 12)});
  sc.horizon_steps = 30;
  const JointTrajectory ref = constant_velocity(sc);
  const Skeleton sk = build_skeleton(std::vector<int>{1}, sc, ref);
  const AnchorPlan plan = make_anchor(sk, sc, ref);
  CHECK(plan.dropped.empty());
  CHECK_FALSE(plan.coarse);
  CHECK(plan.replanned == std::vector<int>{1});
  const std::size_t mid = sc.horizon_steps / 2 - 1;
  CHECK((plan.clean.at(1, mid) - ref.at(0, mid)).norm() < 1.0);
  CHECK(std::abs(plan.clean.at(1, mid).y()) < 0.5);
  // the ego keeps its reference
  for (std::size_t h = 0; h < ref.steps(); ++h) CHECK(plan.clean.at(0, h) == ref.at(0, h));
}

TEST_CASE("anchor keeps an attacker already on a collision course") {
  Scene sc = three_lane({agent(1, 20, 0, 15)});
  sc.agents[0].speed = 5;
  const JointTrajectory ref = constant_velocity(sc);
  const Skeleton sk = build_skeleton(std::vector<int>{1}, sc, ref);
  const AnchorPlan plan = make_anchor(sk, sc, ref);
  for (std::size_t h = 0; h < ref.steps(); ++h) CHECK(plan.clean.at(1, h) == ref.at(1, h));
}

TEST_CASE("anchor without coalition is the reference") {
  const Scene sc = three_lane({agent(1, 60, 4, 10)});
  const JointTrajectory ref = constant_velocity(sc);
  Skeleton sk;
  sk.ego_id = 0;
  sk.mask.assign(sc.num_agents(), 0);
  const AnchorPlan plan = make_anchor(sk, sc, ref);
  for (std::size_t i = 0; i < sc.num_agents(); ++i)
    for (std::size_t h = 0; h < ref.steps(); ++h) CHECK(plan.clean.at(i, h) == ref.at(i, h));
}

TEST_CASE("skeleton totality and anchor feasibility on generated scenes") {
  const auto suite = mixed_suite(30, 77);
  const TargetingParams p;
  int built = 0;
  for (std::size_t j = 0; j < suite.size(); ++j) {
    const Scene& sc = suite[j].scene;
    Rng rng(mix_seed(3, j));
    const JointTrajectory ref = simulate_traffic(sc, rng);
    std::vector<int> s;
    for (const auto& a : sc.agents)
      if (!a.is_ego) s.push_back(a.agent_id);
    Skeleton sk;
    REQUIRE_NOTHROW(sk = build_skeleton(s, sc, ref, p));
    ++built;
    int to_ego = 0;
    for (const auto& e : sk.chain) to_ego += e.to == sk.ego_id;
    CHECK(to_ego == 1);
    const AnchorPlan plan = make_anchor(sk, sc, ref, p);
    for (int id : plan.replanned) {
      const std::size_t i = sc.require_index(id);
      const auto path = plan.clean.agent(i);
      for (const Vec2& q : path) CHECK(sc.map.signed_offroad_distance(q) <= 0.25);
      const auto kin = derive_kinematics(plan.clean, sc.dt_phys)[i];
      for (double v : kin.speed) CHECK(v <= p.v_max + 1e-6);
      if (!plan.coarse) CHECK(max_curvature(path) <= p.kappa_max + 1e-6);
    }
  }
  CHECK(built == 30);
}

TEST_CASE("skeleton json") {
  const Scene sc = three_lane({agent(1, 60, 0, 10)});
  const Skeleton sk = build_skeleton(std::vector<int>{1}, sc, constant_velocity(sc));
  FeasibilityMask m;
  m.reason[1] = Rejection::accepted;
  const auto j = skeleton_to_json(sk, 30, m);
  CHECK(j.at("anchor_index") == 30);
  CHECK(j.at("coalition") == nlohmann::json::array({1}));
  CHECK(j.at("chain") == nlohmann::json::parse("[[1,0]]"));
  CHECK(j.at("mask") == nlohmann::json::array({0, 1}));
  CHECK(j.at("rejections").at("1") == "accepted");
}
