#pragma once

#include "scenforge/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace scenforge {

nlohmann::json scene_to_json(const Scene& scene);
/// Parses and validates a scene document.
Scene scene_from_json(const nlohmann::json& doc);

Scene read_scene(const std::filesystem::path& path);
void write_scene(const std::filesystem::path& path, const Scene& scene);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace scenforge
