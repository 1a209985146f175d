#pragma once

#include "scenforge/random.hpp"
#include "scenforge/world.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace scenforge {

enum class PolicyKind { idm, lane_graph };

std::string to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& s);

struct EgoPolicyParams {
  PolicyKind kind = PolicyKind::idm;
  // IDM
  double v0 = 13.0;   // desired speed, m/s
  double T_h = 1.0;   // time headway, s
  double s0 = 2.0;    // minimum gap, m
  double a = 1.5;     // max accel, m/s^2
  double b = 2.0;     // comfortable decel, m/s^2
  // lane graph
  double target_speed = 13.0;
  double steering_gain = 1.0;
  double lookahead = 8.0;  // m
  double brake_ttc = 1.0;  // s

  /// Tunable vector for the active variant: IDM (v0, T_h, s0, a, b),
  /// lane graph (target_speed, steering_gain, lookahead, brake_ttc).
  std::vector<double> vector() const;
  void set_vector(std::span<const double> v);
  std::vector<std::pair<double, double>> bounds() const;
};

void validate(const EgoPolicyParams& p);
nlohmann::json policy_to_json(const EgoPolicyParams& p);
EgoPolicyParams policy_from_json(const nlohmann::json& doc);

struct SimConfig {
  double b_max = 8.0;          // hard braking limit, m/s^2
  int replan_every = 10;       // ego lane re-association cadence, steps
  double max_steer = 0.5;      // rad
  double env_accel_limit = 8.0;
  double env_yaw_rate = 1.5;   // rad/s
  double offroad_event = 0.25; // m
};

/// a [1 - (v / v0)^4 - (s* / gap)^2], s* = s0 + max(0, v T_h + v dv / (2 sqrt(a b))),
/// gap clamped at 0.1 m, result clamped to [-b_max, a].
double idm_accel(double v, double gap, double dv, const EgoPolicyParams& p, double b_max = 8.0);

struct EgoAction {
  double accel = 0.0;
  double steering = 0.0;
};

/// Nearest agent ahead along `lane` (and its first successor) inside the lane corridor.
struct Leader {
  double gap = 1e9;      // bumper to bumper, m
  double dv = 0.0;       // ego speed minus leader speed along the lane
  int agent_id = -1;
};
Leader find_leader(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                   std::span<const AgentState> others);

/// Agent outside the corridor whose constant-velocity prediction enters it
/// ahead of the ego within `horizon` seconds, at a time within `window`
/// seconds of the ego's own arrival there. Reported as a leader at the
/// entry point, with its along-lane speed.
Leader find_conflict(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                     std::span<const AgentState> others, double window, double horizon = 4.0, double step = 0.2);

/// Pure-pursuit steering toward the point `lookahead` metres ahead on the lane.
double pure_pursuit(const AgentState& ego, std::size_t lane, const LaneGraphMap& map, double lookahead,
                    double gain, double max_steer);

/// Ego controller. Observes only current states and the map.
class EgoController {
 public:
  EgoController(EgoPolicyParams params, SimConfig cfg);

  EgoAction act(int step, const AgentState& ego, std::span<const AgentState> others, const LaneGraphMap& map);
  bool lost_lane() const { return lost_lane_; }

 private:
  EgoPolicyParams p_;
  SimConfig cfg_;
  std::optional<std::size_t> lane_;
  bool lost_lane_ = false;
};

/// One lane-graph decision; exposed for tests.
EgoAction lane_graph_act(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                         std::span<const AgentState> others, const EgoPolicyParams& p, const SimConfig& cfg);

enum class ImpactClass { none, front, side, rear };
std::string to_string(ImpactClass c);

/// front if |angle| <= 45 deg, rear if >= 135 deg, else side; angle between
/// the contact normal (ego -> other) and the ego heading.
ImpactClass classify_impact(const AgentState& ego, const AgentState& other);

/// States at the first overlap on the straight interpolation between two
/// frames (bisection); the previous states when they already overlap.
/// Impacts are classified there, where the penetration is still shallow.
std::pair<AgentState, AgentState> first_contact(const AgentState& ego_prev, const AgentState& other_prev,
                                                const AgentState& ego, const AgentState& other);

enum class EventKind { collision, offroad };

struct SimEvent {
  int step = 0;
  EventKind kind = EventKind::collision;
  ImpactClass impact = ImpactClass::none;
  std::vector<int> participants;
  double value = 0.0;  // offroad distance, or relative speed for collisions
};

struct Rollout {
  std::string scenario_id;
  std::uint64_t seed = 0;
  double dt = 0.2;
  std::vector<std::vector<AgentState>> frames;  // frame 0 is the initial state
  std::vector<EgoAction> actions;               // realised ego accel and steering per step
  std::vector<SimEvent> events;
  int terminated_at = 0;                        // last frame index
  bool collided = false;
  ImpactClass impact = ImpactClass::none;
  int collided_with = -1;
  double rel_vel = 0.0;
  bool invalid = false;
  std::size_t ego_index = 0;
};

/// Environment agents track env_traj waypoints with a unicycle follower; the
/// ego integrates a kinematic bicycle under its policy. Ends at the first ego
/// collision or after H steps.
Rollout run_closed_loop(const Scene& scene, const JointTrajectory& env_traj, const EgoPolicyParams& policy,
                        const SimConfig& cfg = {});

/// Positions of the rollout as an N x H grid; frames after termination hold
/// the last position.
JointTrajectory rollout_positions(const Rollout& r, std::size_t steps);

nlohmann::json rollout_to_json(const Rollout& r);

struct TrafficOptions {
  double lane_change_prob = 0.25;
  double speed_jitter = 2.0;  // m/s around the initial speed
};

/// Background traffic where every agent (ego included) follows lanes with IDM
/// and occasional lane changes; used to fit the trajectory prior.
JointTrajectory simulate_traffic(const Scene& scene, Rng& rng, const TrafficOptions& opts = {},
                                 const SimConfig& cfg = {});

}  // namespace scenforge
