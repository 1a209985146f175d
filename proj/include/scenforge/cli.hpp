#pragma once

#include "scenforge/curriculum.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scenforge {

/// Everything a command needs; serialized to <out>/config.json before it runs.
struct RunConfig {
  std::string command;  // gen-scenes | fit-prior | synthesize | sweep | curriculum
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out = "run";

  // scenes: a directory of scene JSONs, or a generated suite when empty
  std::string scenes_dir;
  std::string test_scenes_dir;
  std::string scene_file;                // synthesize: one scene
  std::string scene_template = "mixed";  // gen-scenes and generated suites
  int scene_count = 20;
  std::uint64_t suite_seed = 2024;
  int test_count = 10;
  std::uint64_t test_suite_seed = 4048;

  // prior: loaded from a file, or fitted on lane-following traffic
  std::string prior_path;
  int prior_scenes = 150;
  std::uint64_t prior_seed = 11;

  std::vector<double> etas{0.0, 1.0, 2.0, 3.0};
  int seeds = 7;
  bool dump_rollouts = false;
  EgoPolicyParams policy;
  PipelineConfig pipeline;
  CurriculumConfig curriculum;  // its pipeline, seed and workers are taken from above
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& doc);

struct RunStatus {
  int invalid_rollouts = 0;
  int invariant_violations = 0;
  int failed_cells = 0;
  int skipped_cells = 0;
  std::vector<std::string> messages;

  /// Nonzero iff an invariant violation or an invalid rollout occurred.
  int exit_code() const;
};

/// Sorted *.json files of a directory, ids taken from the file stems.
std::vector<NamedScene> load_scene_dir(const std::filesystem::path& dir);

RunStatus cmd_gen_scenes(const RunConfig& cfg);
RunStatus cmd_fit_prior(const RunConfig& cfg);
RunStatus cmd_synthesize(const RunConfig& cfg);
RunStatus cmd_sweep(const RunConfig& cfg);
RunStatus cmd_curriculum(const RunConfig& cfg);

/// Writes the config snapshot, then dispatches on cfg.command. Invariant
/// violations (scenforge::Error) are caught and counted.
RunStatus run_command(const RunConfig& cfg);

}  // namespace scenforge
