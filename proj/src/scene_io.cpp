#include "scenforge/scene_io.hpp"

#include <fstream>
#include <sstream>

namespace scenforge {

using nlohmann::json;

json scene_to_json(const Scene& scene) {
  json lanes = json::array();
  for (const Lane& lane : scene.map.lanes()) {
    json pts = json::array();
    for (const Vec2& p : lane.centerline()) pts.push_back({p.x(), p.y()});
    lanes.push_back({{"id", lane.id()},
                     {"centerline", pts},
                     {"width", lane.width()},
                     {"successors", lane.successors()},
                     {"neighbors", lane.neighbors()}});
  }
  json agents = json::array();
  for (const AgentState& a : scene.agents) {
    agents.push_back({{"id", a.agent_id},
                      {"x", a.position.x()},
                      {"y", a.position.y()},
                      {"heading", a.heading},
                      {"speed", a.speed},
                      {"length", a.length},
                      {"width", a.width},
                      {"is_ego", a.is_ego}});
  }
  return {{"map", {{"lanes", lanes}}},
          {"agents", agents},
          {"horizon_steps", scene.horizon_steps},
          {"dt_phys", scene.dt_phys}};
}

Scene scene_from_json(const json& doc) {
  try {
    std::vector<Lane> lanes;
    for (const json& l : doc.at("map").at("lanes")) {
      std::vector<Vec2> pts;
      for (const json& p : l.at("centerline")) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      lanes.emplace_back(l.at("id").get<int>(), std::move(pts), l.at("width").get<double>(),
                         l.value("successors", std::vector<int>{}), l.value("neighbors", std::vector<int>{}));
    }
    Scene scene;
    scene.map = LaneGraphMap(std::move(lanes));
    bool found_ego = false;
    for (const json& a : doc.at("agents")) {
      AgentState s;
      s.agent_id = a.at("id").get<int>();
      s.position = {a.at("x").get<double>(), a.at("y").get<double>()};
      s.heading = a.at("heading").get<double>();
      s.speed = a.at("speed").get<double>();
      s.length = a.at("length").get<double>();
      s.width = a.at("width").get<double>();
      s.is_ego = a.at("is_ego").get<bool>();
      if (s.is_ego && !found_ego) {
        scene.ego_index = scene.agents.size();
        found_ego = true;
      }
      scene.agents.push_back(s);
    }
    scene.horizon_steps = doc.at("horizon_steps").get<int>();
    scene.dt_phys = doc.at("dt_phys").get<double>();
    validate(scene);
    return scene;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed scene: ") + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

Scene read_scene(const std::filesystem::path& path) { return scene_from_json(read_json(path)); }

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  write_json(path, scene_to_json(scene));
}

}  // namespace scenforge
