#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace scenforge {

using Vec2 = Eigen::Vector2d;

/// Raised on violated preconditions or malformed inputs anywhere in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double angle);

struct AgentState {
  Vec2 position = Vec2::Zero();
  double heading = 0.0;
  double speed = 0.0;
  double length = 4.5;
  double width = 1.8;
  int agent_id = 0;
  bool is_ego = false;

  Vec2 velocity() const;
  Vec2 forward() const;
  Vec2 left() const;
};

/// Throws if speed < 0, non-positive footprint, or non-finite fields.
void validate(const AgentState& state);

/// Projection of a point onto a lane centerline.
struct LaneProjection {
  double s = 0.0;         // arc length of the foot point
  double lateral = 0.0;   // signed offset, positive to the left of travel
  double distance = 0.0;  // unsigned distance to the polyline
  Vec2 point = Vec2::Zero();
  Vec2 tangent = Vec2::UnitX();
};

class Lane {
 public:
  Lane() = default;
  Lane(int id, std::vector<Vec2> centerline, double width, std::vector<int> successors = {},
       std::vector<int> neighbors = {});

  int id() const { return id_; }
  double width() const { return width_; }
  double half_width() const { return 0.5 * width_; }
  double length() const { return cumulative_.back(); }
  const std::vector<Vec2>& centerline() const { return centerline_; }
  const std::vector<int>& successors() const { return successors_; }
  const std::vector<int>& neighbors() const { return neighbors_; }

  /// Point at arc length s; s is extrapolated linearly past either end.
  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;
  double heading_at(double s) const;
  LaneProjection project(const Vec2& p) const;

 private:
  std::size_t segment_at(double s) const;

  int id_ = 0;
  std::vector<Vec2> centerline_;
  std::vector<double> cumulative_;
  double width_ = 3.5;
  std::vector<int> successors_;
  std::vector<int> neighbors_;
};

struct LaneMatch {
  std::size_t lane_index = 0;
  LaneProjection projection;
};

/// Lane graph with a drivable region defined as the union of constant-width
/// corridors around each centerline (capsule ends at the polyline tips).
class LaneGraphMap {
 public:
  LaneGraphMap() = default;
  explicit LaneGraphMap(std::vector<Lane> lanes);

  const std::vector<Lane>& lanes() const { return lanes_; }
  const Lane& lane(std::size_t index) const { return lanes_.at(index); }
  std::optional<std::size_t> index_of(int lane_id) const;
  bool empty() const { return lanes_.empty(); }

  /// <= 0 inside the drivable region (negative depth), > 0 distance outside.
  double signed_offroad_distance(const Vec2& p) const;
  /// Gradient of signed_offroad_distance (unit vector away from the nearest centerline).
  Vec2 offroad_gradient(const Vec2& p) const;

  /// Closest lane by corridor distance.
  std::optional<LaneMatch> nearest_lane(const Vec2& p) const;
  /// Lane whose corridor contains p and whose direction agrees with heading,
  /// preferring the smallest lateral offset; falls back to nearest_lane.
  std::optional<LaneMatch> associate(const Vec2& p, double heading) const;

  /// Lanes sharing or neighboring lane `index` (including itself).
  std::vector<std::size_t> adjacent_lanes(std::size_t index) const;

  /// Forward longitudinal distance along successor and neighbor relations from
  /// (from_lane, s_from) to (to_lane, s_to). Neighbor hops keep the arc-length
  /// fraction. Empty when unreachable within max_distance.
  std::optional<double> route_distance(std::size_t from_lane, double s_from, std::size_t to_lane,
                                       double s_to, double max_distance = 1e9) const;

  /// Lane index sequence realizing route_distance, first element from_lane.
  std::optional<std::vector<std::size_t>> route(std::size_t from_lane, double s_from,
                                                std::size_t to_lane, double s_to,
                                                double max_distance = 1e9) const;

 private:
  std::vector<Lane> lanes_;
  std::unordered_map<int, std::size_t> index_;
};

struct Scene {
  LaneGraphMap map;
  std::vector<AgentState> agents;
  std::size_t ego_index = 0;
  int horizon_steps = 30;
  double dt_phys = 0.2;

  std::size_t num_agents() const { return agents.size(); }
  const AgentState& ego() const { return agents.at(ego_index); }
  std::optional<std::size_t> index_of(int agent_id) const;
  std::size_t require_index(int agent_id) const;
};

/// Throws unless exactly one ego sits at ego_index, ids are unique, every
/// agent starts inside the drivable region and H >= 2, dt > 0.
void validate(const Scene& scene);

/// N x H grid of positions; step h is the position at time (h + 1) * dt.
class JointTrajectory {
 public:
  JointTrajectory() = default;
  JointTrajectory(std::size_t agents, std::size_t steps);

  std::size_t agents() const { return agents_; }
  std::size_t steps() const { return steps_; }
  Vec2& at(std::size_t agent, std::size_t step) { return positions_[agent * steps_ + step]; }
  const Vec2& at(std::size_t agent, std::size_t step) const { return positions_[agent * steps_ + step]; }
  std::span<const Vec2> agent(std::size_t i) const {
    return {positions_.data() + i * steps_, steps_};
  }
  std::span<Vec2> agent(std::size_t i) { return {positions_.data() + i * steps_, steps_}; }
  bool all_finite() const;

 private:
  std::size_t agents_ = 0;
  std::size_t steps_ = 0;
  std::vector<Vec2> positions_;
};

struct AgentKinematics {
  std::vector<double> speed;
  std::vector<double> heading;
  std::vector<double> accel;      // longitudinal, d(speed)/dt
  std::vector<double> lat_accel;  // speed * d(heading)/dt
};

/// Central differences in the interior, one-sided at the ends. Heading is the
/// displacement direction, held from the previous step (or initial_headings)
/// when the displacement is below 1e-6 m. Acceleration needs H >= 3 and is
/// zero otherwise.
std::vector<AgentKinematics> derive_kinematics(const JointTrajectory& traj, double dt,
                                               std::span<const double> initial_headings = {});

std::array<Vec2, 4> box_corners(const AgentState& state);

/// Exact separating-axis test for two oriented rectangles.
bool oriented_box_overlap(const AgentState& a, const AgentState& b);

struct Contact {
  bool overlapping = false;
  double depth = 0.0;
  Vec2 normal = Vec2::UnitX();  // minimum-penetration axis, oriented from a to b
};
Contact box_contact(const AgentState& a, const AgentState& b);

/// Minimum distance between two footprints, 0 when they overlap.
double box_distance(const AgentState& a, const AgentState& b);

}  // namespace scenforge
