#include "helpers.hpp"
#include "scenforge/scene_io.hpp"
#include "scenforge/world.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace scenforge;
using scenforge::testing::agent;
using scenforge::testing::straight_map;

namespace {

AgentState box(double x, double y, double heading, double len = 4.0, double wid = 2.0) {
  AgentState s = agent(0, x, y, 0.0, heading);
  s.length = len;
  s.width = wid;
  return s;
}

bool contains(const AgentState& b, const Vec2& p) {
  const Vec2 d = p - b.position;
  return std::abs(d.dot(b.forward())) <= 0.5 * b.length && std::abs(d.dot(b.left())) <= 0.5 * b.width;
}

}  // namespace

TEST_CASE("box overlap hand cases") {
  CHECK(oriented_box_overlap(box(0, 0, 0), box(0, 0, 0)));
  CHECK_FALSE(oriented_box_overlap(box(0, 0, 0), box(10, 0, 0)));
  CHECK(oriented_box_overlap(box(0, 0, 0), box(3.9, 0, 0)));
}

TEST_CASE("box overlap agrees with point sampling") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-5, 5), ang(-M_PI, M_PI), size(1.0, 5.0);
  int disagreements = 0;
  for (int n = 0; n < 1000; ++n) {
    AgentState a = box(pos(rng), pos(rng), ang(rng), size(rng), size(rng));
    AgentState b = box(pos(rng), pos(rng), ang(rng), size(rng), size(rng));
    bool sampled = false;
    for (int i = 0; i < 50 && !sampled; ++i)
      for (int j = 0; j < 50 && !sampled; ++j) {
        const double u = (i + 0.5) / 50.0 - 0.5, v = (j + 0.5) / 50.0 - 0.5;
        const Vec2 p = a.position + a.forward() * (u * a.length) + a.left() * (v * a.width);
        sampled = contains(b, p);
      }
    // sampling can only miss thin overlaps, never invent one
    if (sampled) CHECK(oriented_box_overlap(a, b));
    if (sampled != oriented_box_overlap(a, b)) ++disagreements;
  }
  CHECK(disagreements <= 10);
}

TEST_CASE("box distance and contact") {
  CHECK(box_distance(box(0, 0, 0), box(10, 0, 0)) == doctest::Approx(6.0));
  CHECK(box_distance(box(0, 0, 0), box(1, 0, 0)) == 0.0);
  const Contact c = box_contact(box(0, 0, 0), box(3.5, 0, 0));
  CHECK(c.overlapping);
  CHECK(c.depth == doctest::Approx(0.5));
  CHECK(c.normal.x() == doctest::Approx(1.0));
}

TEST_CASE("signed offroad distance on a straight lane") {
  const LaneGraphMap map = straight_map(1, 100.0, 4.0);
  CHECK(map.signed_offroad_distance(Vec2(50, 0)) == doctest::Approx(-2.0));
  CHECK(map.signed_offroad_distance(Vec2(50, 3)) == doctest::Approx(1.0));
  CHECK(map.signed_offroad_distance(Vec2(50, 2)) == doctest::Approx(0.0).epsilon(1e-12));
  const Vec2 g = map.offroad_gradient(Vec2(50, 3));
  CHECK(g.y() == doctest::Approx(1.0));
}

TEST_CASE("signed offroad distance is 1-Lipschitz") {
  const LaneGraphMap map = straight_map(2, 100.0, 3.5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> px(-10, 110), py(-8, 12), d(-0.05, 0.05);
  for (int n = 0; n < 2000; ++n) {
    const Vec2 p(px(rng), py(rng)), dp(d(rng), d(rng));
    CHECK(std::abs(map.signed_offroad_distance(p) - map.signed_offroad_distance(p + dp)) <= dp.norm() + 1e-12);
  }
}

TEST_CASE("lane projection and routing") {
  const LaneGraphMap map = straight_map(2, 100.0, 4.0);
  const LaneProjection pr = map.lane(0).project(Vec2(30, 1));
  CHECK(pr.s == doctest::Approx(30));
  CHECK(pr.lateral == doctest::Approx(1));
  const auto m = map.associate(Vec2(30, 3.5), 0.0);
  REQUIRE(m);
  CHECK(m->lane_index == 1);
  const auto d = map.route_distance(0, 10, 1, 40);
  REQUIRE(d);
  CHECK(*d == doctest::Approx(30));
  CHECK_FALSE(map.route_distance(0, 40, 0, 10));
}

TEST_CASE("kinematics by finite differences") {
  const double dt = 0.1;
  JointTrajectory cv(1, 20), acc(1, 20), still(1, 20);
  for (std::size_t h = 0; h < 20; ++h) {
    const double t = (h + 1) * dt;
    cv.at(0, h) = Vec2(10 * t, 0);
    acc.at(0, h) = Vec2(t * t, 0);  // x = 0.5 * 2 * t^2
    still.at(0, h) = Vec2(1, 1);
  }
  const auto k = derive_kinematics(cv, dt)[0];
  for (std::size_t h = 0; h < 20; ++h) {
    CHECK(k.speed[h] == doctest::Approx(10));
    CHECK(k.accel[h] == doctest::Approx(0).epsilon(1e-9));
  }
  const auto a = derive_kinematics(acc, dt)[0];
  for (std::size_t h = 2; h + 2 < 20; ++h) CHECK(a.accel[h] == doctest::Approx(2.0));
  const std::vector<double> heading0{0.7};
  const auto s = derive_kinematics(still, dt, heading0)[0];
  for (std::size_t h = 0; h < 20; ++h) {
    CHECK(s.speed[h] == 0.0);
    CHECK(s.heading[h] == doctest::Approx(0.7));
  }
}

TEST_CASE("scene validation") {
  Scene sc;
  sc.map = straight_map(1);
  sc.agents = {agent(0, 10, 0, 5, 0, true), agent(1, 30, 0, 5)};
  CHECK_NOTHROW(validate(sc));
  Scene dup = sc;
  dup.agents[1].agent_id = 0;
  CHECK_THROWS_AS(validate(dup), Error);
  Scene off = sc;
  off.agents[1].position.y() = 10;
  CHECK_THROWS_AS(validate(off), Error);
  AgentState neg = sc.agents[1];
  neg.speed = -1;
  CHECK_THROWS_AS(validate(neg), Error);
}

TEST_CASE("scene json round trip") {
  Scene sc;
  sc.map = straight_map(2);
  sc.agents = {agent(0, 10, 0, 5, 0, true), agent(3, 30, 4, 7.5, 0.01)};
  const Scene back = scene_from_json(scene_to_json(sc));
  REQUIRE(back.num_agents() == 2);
  CHECK(back.agents[1].agent_id == 3);
  CHECK(back.agents[1].speed == 7.5);
  CHECK(back.map.lanes().size() == 2);
  CHECK(scene_to_json(back) == scene_to_json(sc));
}
