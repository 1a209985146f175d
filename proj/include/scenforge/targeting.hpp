#pragma once

#include "scenforge/world.hpp"

#include <json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace scenforge {

enum class Rejection { accepted, off_drivable, no_lane_association, no_route_conflict, static_non_blocking };

std::string to_string(Rejection r);

struct FeasibilityMask {
  std::map<int, Rejection> reason;  // per candidate agent id

  bool accepted(int id) const;
  std::vector<int> accepted_ids() const;
};

struct TargetingParams {
  // semantic filter
  double lane_margin = 0.5;     // m beyond half-width still counted as lane-associated
  double d_conflict = 15.0;     // m, reference-path proximity for a route conflict
  double min_mean_speed = 0.5;  // m/s
  double blocking_ahead = 10.0; // m ahead on the ego lane
  // skeleton
  int k_near = 1;
  int k_far = 1;
  double tau_dist = 25.0;  // m
  double tau_long = 30.0;  // m
  // anchor planner
  double v_max = 15.0;      // m/s
  double kappa_max = 0.2;   // 1/m
  double d_goal = 2.0;      // m, already-engaged threshold
  double min_lane_change = 15.0;  // m
  double anchor_accel = 3.0;      // m/s^2, limit of the anchor speed profile
};

/// Rule-based feasibility check. Order: map consistency, dynamic relevance,
/// interaction potential; the first failing rule is the reported reason.
FeasibilityMask semantic_filter(std::span<const int> candidates, const Scene& scene, const JointTrajectory& ref,
                                const TargetingParams& params = {});

/// S = S_top ∩ F, in S_top order.
std::vector<int> intersect_support(std::span<const int> s_top, const FeasibilityMask& mask);

struct ChainEdge {
  int from = 0;
  int to = 0;
  friend bool operator==(const ChainEdge&, const ChainEdge&) = default;
};

struct Skeleton {
  int ego_id = 0;
  std::vector<int> coalition;  // sorted ids; near ∪ intermediates ∪ far
  std::vector<int> near;
  std::vector<int> intermediates;
  std::vector<int> far;
  std::vector<ChainEdge> chain;  // attacker -> target, exactly one edge ends at the ego
  std::vector<int> mask;         // per agent index, 1 on coalition agents
  bool fallback = false;         // no viable far chain, coalition reduced to C_near

  bool in_coalition(int id) const;
};

/// Longitudinal distance along the lane graph between two agents' initial
/// positions (either direction), infinity when not connected.
double lane_headway(const Scene& scene, std::size_t a, std::size_t b);

/// Builds the causal chain f -> (intermediate) -> n -> ego. Throws
/// Error("no feasible adversaries") for an empty support.
Skeleton build_skeleton(std::span<const int> support, const Scene& scene, const JointTrajectory& ref,
                        const TargetingParams& params = {});

/// Block mask applied to a latent with `block` entries per agent.
Eigen::VectorXd apply_mask(const Skeleton& skel, const Eigen::VectorXd& v, Eigen::Index block);

struct AnchorPlan {
  JointTrajectory clean;            // x~_0 in world coordinates
  std::vector<ChainEdge> dropped;   // edges with no lane path to the rendezvous
  std::vector<int> replanned;       // agents whose path was re-aimed
  bool coarse = false;              // straight-line fallback used
};

/// Coarse lane-graph planner: each coalition agent follows lanes toward the
/// rendezvous on its target's reference path at the horizon midpoint, with
/// smoothstep lane changes. When no lane route reaches that point, the
/// rendezvous moves to where the target's path meets the attacker's own lane,
/// at the time the target gets there. Speed follows a constant-acceleration
/// profile from the initial speed, kept within [0, v_max]. Agents outside the
/// coalition keep their reference trajectories.
AnchorPlan make_anchor(const Skeleton& skel, const Scene& scene, const JointTrajectory& ref,
                       const TargetingParams& params = {});

nlohmann::json skeleton_to_json(const Skeleton& skel, int anchor_index, const FeasibilityMask& mask);

}  // namespace scenforge
