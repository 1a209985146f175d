#pragma once

#include "scenforge/world.hpp"

#include <vector>

namespace scenforge::testing {

/// Straight lanes along +x, `count` lanes stacked in +y, each `width` wide.
inline LaneGraphMap straight_map(int count = 1, double length = 200.0, double width = 4.0) {
  std::vector<Lane> lanes;
  for (int i = 0; i < count; ++i) {
    std::vector<int> nb;
    if (i > 0) nb.push_back(i - 1);
    if (i + 1 < count) nb.push_back(i + 1);
    const double y = i * width;
    lanes.emplace_back(i, std::vector<Vec2>{Vec2(0, y), Vec2(length, y)}, width, std::vector<int>{}, nb);
  }
  return LaneGraphMap(std::move(lanes));
}

inline AgentState agent(int id, double x, double y, double speed, double heading = 0.0, bool ego = false) {
  AgentState s;
  s.agent_id = id;
  s.position = Vec2(x, y);
  s.speed = speed;
  s.heading = heading;
  s.is_ego = ego;
  return s;
}

/// Constant-velocity positions for every agent of a scene.
inline JointTrajectory constant_velocity(const Scene& scene) {
  JointTrajectory t(scene.num_agents(), static_cast<std::size_t>(scene.horizon_steps));
  for (std::size_t i = 0; i < scene.num_agents(); ++i)
    for (std::size_t h = 0; h < t.steps(); ++h)
      t.at(i, h) = scene.agents[i].position + scene.agents[i].velocity() * (double(h + 1) * scene.dt_phys);
  return t;
}

}  // namespace scenforge::testing
