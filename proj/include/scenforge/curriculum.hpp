#pragma once

#include "scenforge/control.hpp"
#include "scenforge/metrics.hpp"
#include "scenforge/prior.hpp"
#include "scenforge/riskgraph.hpp"
#include "scenforge/scenegen.hpp"
#include "scenforge/simloop.hpp"
#include "scenforge/targeting.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace scenforge {

enum class SupportSelection { topo_feas, topo_only, random_k };
std::string to_string(SupportSelection s);
SupportSelection support_selection_from_string(const std::string& s);

struct PipelineConfig {
  RiskParams risk;
  TargetingParams targeting;
  GuidanceConfig guidance;
  SimConfig sim;
  SupportSelection selection = SupportSelection::topo_feas;
  bool anchor_at_zero_eta = false;  // eta = 0 reproduces the uncontrolled sample
};

nlohmann::json pipeline_to_json(const PipelineConfig& c);
PipelineConfig pipeline_from_json(const nlohmann::json& doc);

/// Reference pass: feasibility-only sample of the environment, closed-loop
/// rollout with the current policy, and risk-graph scores of that rollout.
struct ReferenceRun {
  Synthesis synth;
  Rollout rollout;
  JointTrajectory positions;  // N x H, ego from the rollout
  BifurcationScores scores;
};

ReferenceRun run_reference(const Scene& scene, const TrajectoryPrior& prior, const EgoPolicyParams& policy,
                           const PipelineConfig& cfg, std::uint64_t seed);

struct Targets {
  FeasibilityMask mask;
  std::vector<int> support;
  Skeleton skeleton;
  AnchorPlan anchor;
  Eigen::VectorXd anchor_latent;
  bool skipped = false;
  std::string reason;
};

/// Support selection, skeleton and anchor from a reference run.
Targets select_targets(const Scene& scene, const TrajectoryPrior& prior, const ReferenceRun& ref,
                       const PipelineConfig& cfg, std::uint64_t seed);

struct EpisodeResult {
  std::string scene_id;
  std::uint64_t seed = 0;
  double eta = 0.0;
  bool skipped = false;
  std::string skip_reason;
  double kl = 0.0;
  Skeleton skeleton;
  JointTrajectory env_traj;
  Rollout rollout;
  Synthesis synth;
};

EpisodeResult adversarial_episode(const NamedScene& scene, const TrajectoryPrior& prior,
                                  const EgoPolicyParams& policy, const PipelineConfig& cfg, const ReferenceRun& ref,
                                  const Targets& targets, double eta, std::uint64_t seed);

/// Reference, targeting and synthesis in one call.
EpisodeResult run_episode(const NamedScene& scene, const TrajectoryPrior& prior, const EgoPolicyParams& policy,
                          const PipelineConfig& cfg, double eta, std::uint64_t seed);

/// Seed of cell (scene j, seed index s) under a global seed; independent of eta.
std::uint64_t cell_seed(std::uint64_t global, std::size_t scene, std::size_t seed_index);

struct SweepCell {
  std::size_t scene = 0;
  std::size_t seed_index = 0;
  double eta = 0.0;
  EpisodeResult result;
};

/// Every (scene, eta, seed) cell; the reference of each (scene, seed) is shared
/// across etas. Cells are ordered scene-major, then seed, then eta.
std::vector<SweepCell> run_sweep(std::span<const NamedScene> scenes, const TrajectoryPrior& prior,
                                 const EgoPolicyParams& policy, const PipelineConfig& cfg,
                                 std::span<const double> etas, int seeds, std::uint64_t global_seed, int workers);

// --- curriculum ---------------------------------------------------------------

struct CemConfig {
  int population = 16;
  double elite_frac = 0.25;
  int iterations = 4;
  double sigma_frac = 0.15;  // initial std as a fraction of each bound range
  double w_collision = 1.0;
  double w_ttc = 0.5;
  double w_acc = 0.05;
  std::vector<int> active;  // indices into the policy vector to search; empty searches all
};

void validate(const CemConfig& c);

struct CurriculumConfig {
  int rounds = 3;
  std::vector<double> etas{0.5, 1.0, 2.0};
  int seeds_per_scene = 4;
  int eval_seeds = 8;
  double eta_increase = 1.0;  // held-out evaluation also at max(eta) + eta_increase
  CemConfig cem;
  PipelineConfig pipeline;
  std::uint64_t seed = 1;
  int workers = 1;
};

void validate(const CurriculumConfig& c);
nlohmann::json curriculum_to_json(const CurriculumConfig& c);
CurriculumConfig curriculum_from_json(const nlohmann::json& doc);

struct BufferEntry {
  int round = 0;
  std::size_t scene = 0;  // index into the tuning scenes
  std::string scene_id;
  std::uint64_t seed = 0;
  Skeleton skeleton;
  JointTrajectory env_traj;
  Rollout rollout;
  EgoPolicyParams policy;
};

struct AdversarialBuffer {
  std::vector<BufferEntry> entries;
};

struct RoundResult {
  AdversarialBuffer buffer;
  MetricsReport report;
  int skipped = 0;
  double eta = 0.0;
};

RoundResult run_round(int round, const EgoPolicyParams& policy, std::span<const NamedScene> scenes,
                      const TrajectoryPrior& prior, const CurriculumConfig& cfg);

/// Buffer objective: mean of w_c collided + w_t TTC-C + w_a mAcc over the
/// entries re-simulated with `policy` against their frozen env trajectories.
double buffer_objective(const EgoPolicyParams& policy, const AdversarialBuffer& buffer,
                        std::span<const NamedScene> scenes, const CemConfig& cem, const SimConfig& sim, int workers);

struct UpdateResult {
  EgoPolicyParams policy;
  double incumbent_objective = 0.0;
  double objective = 0.0;
  bool improved = false;
  int invalid_candidates = 0;
};

/// Cross-entropy search over the policy vector; never returns a candidate
/// whose buffer objective exceeds the incumbent's.
UpdateResult update_policy(const EgoPolicyParams& policy, const AdversarialBuffer& buffer,
                           std::span<const NamedScene> scenes, const CemConfig& cem, const SimConfig& sim, Rng& rng,
                           int workers);

struct AccessRecord {
  std::string phase;  // "round-<r>", "update-<r>", "final"
  std::string split;  // "tuning" or "test"
  std::string scene_id;
};

struct GainRow {
  std::string split;
  double eta = 0.0;
  MetricsReport before;
  MetricsReport after;
  // relative change in percent; positive is better for every column
  double failure_rate = 0.0;
  double min_dtc = 0.0;
  double ttc_cost = 0.0;
  double mean_accel = 0.0;
};

struct CurriculumResult {
  EgoPolicyParams initial;
  EgoPolicyParams final_policy;
  std::vector<EgoPolicyParams> policies;  // policy used in each round
  std::vector<RoundResult> rounds;
  std::vector<UpdateResult> updates;
  std::vector<GainRow> gains;
  std::vector<AccessRecord> access_log;
};

/// Evaluation batch of a policy on a split at one eta (eval seeds only).
std::vector<Rollout> evaluate_policy(const EgoPolicyParams& policy, std::span<const NamedScene> scenes,
                                     const TrajectoryPrior& prior, const PipelineConfig& cfg, double eta, int seeds,
                                     std::uint64_t seed, int workers);

GainRow gain_row(const std::string& split, double eta, const MetricsReport& before, const MetricsReport& after);

CurriculumResult run_curriculum(const CurriculumConfig& cfg, std::span<const NamedScene> tuning,
                                std::span<const NamedScene> test, const TrajectoryPrior& prior,
                                const EgoPolicyParams& policy0);

std::string gain_table_csv(std::span<const GainRow> rows);

// --- prior training data ------------------------------------------------------

/// Fits the trajectory prior on lane-following traffic over a mixed scene suite.
TrajectoryPrior train_default_prior(int scenes, std::uint64_t seed, const PriorFitOptions& opts = {},
                                    GmmFitReport* report = nullptr);

/// Lane-following kinematics of the given scenes, the realism reference.
KinematicSamples reference_kinematics(std::span<const NamedScene> scenes, std::uint64_t seed, int per_scene = 2);

}  // namespace scenforge
