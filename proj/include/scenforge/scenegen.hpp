#pragma once

#include "scenforge/world.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scenforge {

enum class SceneTemplate { straight_2lane, merge, intersection };

std::string to_string(SceneTemplate t);
/// Accepts "straight-2lane", "merge", "4way-intersection".
SceneTemplate template_from_string(const std::string& s);

struct NamedScene {
  std::string id;
  Scene scene;
};

struct SceneGenOptions {
  int min_agents = 5;  // including the ego
  int max_agents = 8;
  int max_tries = 1000;
  int horizon_steps = 30;
  double dt_phys = 0.2;
};

LaneGraphMap template_map(SceneTemplate t);

/// One randomized scene; nullopt when no valid placement was found in max_tries.
std::optional<Scene> generate_scene(SceneTemplate t, std::uint64_t seed, const SceneGenOptions& opts = {});

/// `count` scenes; scene j uses seed mix(seed, j). Unsatisfiable scenes are
/// skipped, with their indices reported in `skipped` when given.
std::vector<NamedScene> generate_scenes(SceneTemplate t, int count, std::uint64_t seed,
                                        const SceneGenOptions& opts = {}, std::vector<int>* skipped = nullptr);

/// Suite cycling through the three templates.
std::vector<NamedScene> mixed_suite(int count, std::uint64_t seed, const SceneGenOptions& opts = {});

/// True when some agent starts on a lane whose successor is shared with
/// another lane holding an agent (a merging pair).
bool has_merging_pair(const Scene& scene);

}  // namespace scenforge
