#include "scenforge/scenegen.hpp"

#include "scenforge/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace scenforge {

namespace {

constexpr double kLaneWidth = 3.5;

std::vector<Vec2> straight(Vec2 from, Vec2 to, int pieces = 4) {
  std::vector<Vec2> pts;
  for (int k = 0; k <= pieces; ++k) pts.push_back(from + (to - from) * (static_cast<double>(k) / pieces));
  return pts;
}

// Ramp joining the main road at x = 100 from 12 m to the right.
std::vector<Vec2> ramp_centerline() {
  std::vector<Vec2> pts;
  for (int k = 0; k <= 28; ++k) {
    const double x = -40.0 + 5.0 * k;
    const double t = (x + 40.0) / 140.0;
    const double s = t * t * (3.0 - 2.0 * t);
    pts.emplace_back(x, -12.0 * (1.0 - s));
  }
  return pts;
}

struct Slot {
  std::size_t lane;
  double s_lo;
  double s_hi;
};

}  // namespace

std::string to_string(SceneTemplate t) {
  switch (t) {
    case SceneTemplate::straight_2lane: return "straight-2lane";
    case SceneTemplate::merge: return "merge";
    case SceneTemplate::intersection: return "4way-intersection";
  }
  return "unknown";
}

SceneTemplate template_from_string(const std::string& s) {
  if (s == "straight-2lane") return SceneTemplate::straight_2lane;
  if (s == "merge") return SceneTemplate::merge;
  if (s == "4way-intersection") return SceneTemplate::intersection;
  throw Error("unknown scene template '" + s + "'");
}

LaneGraphMap template_map(SceneTemplate t) {
  std::vector<Lane> lanes;
  switch (t) {
    case SceneTemplate::straight_2lane:
      lanes.emplace_back(0, straight({-60.0, 0.0}, {260.0, 0.0}), kLaneWidth, std::vector<int>{},
                         std::vector<int>{1});
      lanes.emplace_back(1, straight({-60.0, kLaneWidth}, {260.0, kLaneWidth}), kLaneWidth, std::vector<int>{},
                         std::vector<int>{0});
      break;
    case SceneTemplate::merge:
      // 0: right lane before the junction, 1: right lane after, 2: left lane, 3: ramp
      lanes.emplace_back(0, straight({-60.0, 0.0}, {100.0, 0.0}), kLaneWidth, std::vector<int>{1},
                         std::vector<int>{2});
      lanes.emplace_back(1, straight({100.0, 0.0}, {300.0, 0.0}), kLaneWidth, std::vector<int>{},
                         std::vector<int>{2});
      lanes.emplace_back(2, straight({-60.0, kLaneWidth}, {300.0, kLaneWidth}), kLaneWidth, std::vector<int>{},
                         std::vector<int>{0, 1});
      lanes.emplace_back(3, ramp_centerline(), kLaneWidth, std::vector<int>{1}, std::vector<int>{});
      break;
    case SceneTemplate::intersection: {
      const double o = 0.5 * kLaneWidth;
      lanes.emplace_back(0, straight({-160.0, -o}, {160.0, -o}), kLaneWidth);  // eastbound
      lanes.emplace_back(1, straight({160.0, o}, {-160.0, o}), kLaneWidth);    // westbound
      lanes.emplace_back(2, straight({o, -160.0}, {o, 160.0}), kLaneWidth);    // northbound
      lanes.emplace_back(3, straight({-o, 160.0}, {-o, -160.0}), kLaneWidth);  // southbound
      break;
    }
  }
  return LaneGraphMap(std::move(lanes));
}

std::optional<Scene> generate_scene(SceneTemplate t, std::uint64_t seed, const SceneGenOptions& opts) {
  if (opts.min_agents < 2 || opts.max_agents < opts.min_agents) throw Error("generate_scene: bad agent range");
  Rng rng(seed);
  Scene scene;
  scene.map = template_map(t);
  scene.horizon_steps = opts.horizon_steps;
  scene.dt_phys = opts.dt_phys;

  Slot ego_slot{0, 60.0, 80.0};
  std::vector<Slot> slots;
  std::optional<Slot> required;
  switch (t) {
    case SceneTemplate::straight_2lane:
      ego_slot = {0, 60.0, 80.0};
      slots = {{0, 30.0, 170.0}, {1, 30.0, 170.0}};
      break;
    case SceneTemplate::merge:
      ego_slot = {0, 50.0, 80.0};
      slots = {{0, 20.0, 155.0}, {1, 0.0, 60.0}, {2, 20.0, 200.0}, {3, 60.0, 125.0}};
      required = Slot{3, 75.0, 125.0};
      break;
    case SceneTemplate::intersection:
      ego_slot = {0, 100.0, 120.0};
      slots = {{0, 80.0, 190.0}, {1, 90.0, 150.0}, {2, 90.0, 150.0}, {3, 90.0, 150.0}};
      required = Slot{2, 110.0, 140.0};
      break;
  }

  const int n_agents = std::uniform_int_distribution<int>(opts.min_agents, opts.max_agents)(rng);

  auto sample_agent = [&](const Slot& slot, int id, bool ego) {
    const Lane& lane = scene.map.lane(slot.lane);
    AgentState a;
    const double s = uniform(rng, slot.s_lo, std::min(slot.s_hi, lane.length()));
    const double lat = uniform(rng, -0.3, 0.3);
    const Vec2 tan = lane.tangent_at(s);
    a.position = lane.point_at(s) + lat * Vec2(-tan.y(), tan.x());
    a.heading = lane.heading_at(s);
    a.speed = ego ? uniform(rng, 8.0, 12.0) : uniform(rng, 5.0, 13.0);
    a.agent_id = id;
    a.is_ego = ego;
    return a;
  };
  auto fits = [&](const AgentState& a) {
    if (scene.map.signed_offroad_distance(a.position) > 0.0) return false;
    for (const AgentState& b : scene.agents) {
      if (box_distance(a, b) < 3.0) return false;
    }
    return true;
  };

  for (int attempt = 0; attempt < opts.max_tries; ++attempt) {
    scene.agents.clear();
    bool ok = true;
    for (int id = 0; id < n_agents && ok; ++id) {
      const bool ego = id == 0;
      Slot slot = ego ? ego_slot : slots[std::uniform_int_distribution<std::size_t>(0, slots.size() - 1)(rng)];
      if (id == 1 && required) slot = *required;
      ok = false;
      for (int inner = 0; inner < 20 && !ok; ++inner) {
        const AgentState a = sample_agent(slot, id, ego);
        if (fits(a)) {
          scene.agents.push_back(a);
          ok = true;
        }
      }
    }
    if (!ok) continue;
    scene.ego_index = 0;
    validate(scene);
    return scene;
  }
  return std::nullopt;
}

std::vector<NamedScene> generate_scenes(SceneTemplate t, int count, std::uint64_t seed, const SceneGenOptions& opts,
                                        std::vector<int>* skipped) {
  std::vector<NamedScene> out;
  for (int j = 0; j < count; ++j) {
    auto s = generate_scene(t, mix_seed(seed, static_cast<std::uint64_t>(j)), opts);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04d", to_string(t).c_str(), j);
    if (s) {
      out.push_back({name, std::move(*s)});
    } else if (skipped) {
      skipped->push_back(j);
    }
  }
  return out;
}

std::vector<NamedScene> mixed_suite(int count, std::uint64_t seed, const SceneGenOptions& opts) {
  const SceneTemplate order[3] = {SceneTemplate::straight_2lane, SceneTemplate::merge, SceneTemplate::intersection};
  std::vector<NamedScene> out;
  for (int j = 0; j < count; ++j) {
    const SceneTemplate t = order[j % 3];
    auto s = generate_scene(t, mix_seed(seed, static_cast<std::uint64_t>(j)), opts);
    if (!s) continue;
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04d", to_string(t).c_str(), j);
    out.push_back({name, std::move(*s)});
  }
  return out;
}

bool has_merging_pair(const Scene& scene) {
  std::vector<std::size_t> lanes;
  for (const AgentState& a : scene.agents) {
    if (const auto m = scene.map.associate(a.position, a.heading)) lanes.push_back(m->lane_index);
  }
  for (std::size_t x = 0; x < lanes.size(); ++x) {
    for (std::size_t y = 0; y < lanes.size(); ++y) {
      if (lanes[x] == lanes[y]) continue;
      for (int sx : scene.map.lane(lanes[x]).successors()) {
        const auto& sy = scene.map.lane(lanes[y]).successors();
        if (std::find(sy.begin(), sy.end(), sx) != sy.end()) return true;
      }
    }
  }
  return false;
}

}  // namespace scenforge
