#include "scenforge/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <unordered_set>

namespace scenforge {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

double normalize_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(angle, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Vec2 AgentState::forward() const { return {std::cos(heading), std::sin(heading)}; }
Vec2 AgentState::left() const { return {-std::sin(heading), std::cos(heading)}; }
Vec2 AgentState::velocity() const { return speed * forward(); }

void validate(const AgentState& s) {
  if (!s.position.allFinite() || !std::isfinite(s.heading) || !std::isfinite(s.speed)) {
    throw Error("agent " + std::to_string(s.agent_id) + ": non-finite state");
  }
  if (s.speed < 0.0) throw Error("agent " + std::to_string(s.agent_id) + ": negative speed");
  if (!(s.length > 0.0) || !(s.width > 0.0)) {
    throw Error("agent " + std::to_string(s.agent_id) + ": footprint must be positive");
  }
}

// ---------------------------------------------------------------------------
// Lane

Lane::Lane(int id, std::vector<Vec2> centerline, double width, std::vector<int> successors,
           std::vector<int> neighbors)
    : id_(id),
      centerline_(std::move(centerline)),
      width_(width),
      successors_(std::move(successors)),
      neighbors_(std::move(neighbors)) {
  if (centerline_.size() < 2) throw Error("lane " + std::to_string(id_) + ": needs >= 2 points");
  if (!(width_ > 0.0)) throw Error("lane " + std::to_string(id_) + ": width must be positive");
  cumulative_.reserve(centerline_.size());
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < centerline_.size(); ++i) {
    const double seg = (centerline_[i] - centerline_[i - 1]).norm();
    if (!(seg > 0.0)) throw Error("lane " + std::to_string(id_) + ": repeated centerline point");
    cumulative_.push_back(cumulative_.back() + seg);
  }
}

std::size_t Lane::segment_at(double s) const {
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(idx, centerline_.size() - 2);
}

Vec2 Lane::point_at(double s) const {
  const std::size_t i = segment_at(s);
  const Vec2 t = (centerline_[i + 1] - centerline_[i]).normalized();
  return centerline_[i] + (s - cumulative_[i]) * t;
}

Vec2 Lane::tangent_at(double s) const {
  const std::size_t i = segment_at(s);
  return (centerline_[i + 1] - centerline_[i]).normalized();
}

double Lane::heading_at(double s) const {
  const Vec2 t = tangent_at(s);
  return std::atan2(t.y(), t.x());
}

LaneProjection Lane::project(const Vec2& p) const {
  LaneProjection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < centerline_.size(); ++i) {
    const Vec2& a = centerline_[i];
    const Vec2 ab = centerline_[i + 1] - a;
    const double len = cumulative_[i + 1] - cumulative_[i];
    const double t = std::clamp((p - a).dot(ab) / (len * len), 0.0, 1.0);
    const Vec2 foot = a + t * ab;
    const double d2 = (p - foot).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.s = cumulative_[i] + t * len;
      best.point = foot;
      best.tangent = ab / len;
    }
  }
  best.distance = std::sqrt(best_d2);
  best.lateral = cross(best.tangent, p - best.point);
  return best;
}

// ---------------------------------------------------------------------------
// LaneGraphMap

LaneGraphMap::LaneGraphMap(std::vector<Lane> lanes) : lanes_(std::move(lanes)) {
  for (std::size_t i = 0; i < lanes_.size(); ++i) {
    if (!index_.emplace(lanes_[i].id(), i).second) {
      throw Error("duplicate lane id " + std::to_string(lanes_[i].id()));
    }
  }
  for (const Lane& lane : lanes_) {
    for (int id : lane.successors()) {
      if (!index_.contains(id)) throw Error("lane " + std::to_string(lane.id()) + ": unknown successor");
    }
    for (int id : lane.neighbors()) {
      if (!index_.contains(id)) throw Error("lane " + std::to_string(lane.id()) + ": unknown neighbor");
    }
  }
}

std::optional<std::size_t> LaneGraphMap::index_of(int lane_id) const {
  auto it = index_.find(lane_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<LaneMatch> LaneGraphMap::nearest_lane(const Vec2& p) const {
  std::optional<LaneMatch> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lanes_.size(); ++i) {
    LaneProjection proj = lanes_[i].project(p);
    const double d = proj.distance - lanes_[i].half_width();
    if (d < best_d) {
      best_d = d;
      best = LaneMatch{i, proj};
    }
  }
  return best;
}

double LaneGraphMap::signed_offroad_distance(const Vec2& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Lane& lane : lanes_) {
    best = std::min(best, lane.project(p).distance - lane.half_width());
  }
  return best;
}

Vec2 LaneGraphMap::offroad_gradient(const Vec2& p) const {
  auto match = nearest_lane(p);
  if (!match) return Vec2::Zero();
  const Vec2 d = p - match->projection.point;
  const double n = d.norm();
  return n > 1e-12 ? Vec2(d / n) : Vec2(Vec2::Zero());
}

std::optional<LaneMatch> LaneGraphMap::associate(const Vec2& p, double heading) const {
  std::optional<LaneMatch> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lanes_.size(); ++i) {
    LaneProjection proj = lanes_[i].project(p);
    if (proj.distance > lanes_[i].half_width()) continue;
    const double lane_heading = std::atan2(proj.tangent.y(), proj.tangent.x());
    if (std::abs(normalize_angle(heading - lane_heading)) >= 0.5 * std::numbers::pi) continue;
    if (proj.distance < best_d) {
      best_d = proj.distance;
      best = LaneMatch{i, proj};
    }
  }
  return best ? best : nearest_lane(p);
}

std::vector<std::size_t> LaneGraphMap::adjacent_lanes(std::size_t index) const {
  std::vector<std::size_t> out{index};
  for (int id : lanes_.at(index).neighbors()) out.push_back(*index_of(id));
  for (std::size_t j = 0; j < lanes_.size(); ++j) {
    const auto& nb = lanes_[j].neighbors();
    if (std::find(nb.begin(), nb.end(), lanes_[index].id()) != nb.end()) out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<std::vector<std::size_t>> LaneGraphMap::route(std::size_t from_lane, double s_from,
                                                            std::size_t to_lane, double s_to,
                                                            double max_distance) const {
  struct Label {
    double cost;
    std::size_t lane;
    double entry_s;
  };
  auto cmp = [](const Label& a, const Label& b) {
    return a.cost > b.cost || (a.cost == b.cost && a.lane > b.lane);
  };
  std::priority_queue<Label, std::vector<Label>, decltype(cmp)> open(cmp);
  const std::size_t n = lanes_.size();
  std::vector<bool> closed(n, false);
  std::vector<std::size_t> parent(n, n);
  std::vector<double> tentative(n, std::numeric_limits<double>::infinity());
  tentative[from_lane] = 0.0;
  open.push({0.0, from_lane, s_from});

  double best_total = std::numeric_limits<double>::infinity();
  std::size_t best_lane = n;
  while (!open.empty()) {
    Label cur = open.top();
    open.pop();
    if (closed[cur.lane]) continue;
    if (cur.cost > std::min(best_total, max_distance)) break;
    closed[cur.lane] = true;
    const Lane& lane = lanes_[cur.lane];
    if (cur.lane == to_lane && s_to >= cur.entry_s - 1e-9) {
      const double total = cur.cost + std::max(0.0, s_to - cur.entry_s);
      if (total < best_total) {
        best_total = total;
        best_lane = cur.lane;
      }
    }
    auto relax = [&](std::size_t next, double cost, double entry) {
      if (closed[next] || cost > max_distance || cost >= tentative[next]) return;
      tentative[next] = cost;
      parent[next] = cur.lane;
      open.push({cost, next, entry});
    };
    for (int id : lane.successors()) {
      relax(*index_of(id), cur.cost + std::max(0.0, lane.length() - cur.entry_s), 0.0);
    }
    for (int id : lane.neighbors()) {
      const std::size_t nb = *index_of(id);
      relax(nb, cur.cost, cur.entry_s * lanes_[nb].length() / lane.length());
    }
  }
  if (best_lane == n || best_total > max_distance) return std::nullopt;
  std::vector<std::size_t> seq;
  for (std::size_t l = best_lane; l != n; l = parent[l]) {
    seq.push_back(l);
    if (l == from_lane) break;
  }
  std::reverse(seq.begin(), seq.end());
  return seq;
}

std::optional<double> LaneGraphMap::route_distance(std::size_t from_lane, double s_from,
                                                   std::size_t to_lane, double s_to,
                                                   double max_distance) const {
  auto seq = route(from_lane, s_from, to_lane, s_to, max_distance);
  if (!seq) return std::nullopt;
  double total = 0.0;
  double s = s_from;
  for (std::size_t k = 0; k + 1 < seq->size(); ++k) {
    const Lane& cur = lanes_[(*seq)[k]];
    const std::size_t next = (*seq)[k + 1];
    const auto& nb = cur.neighbors();
    if (std::find(nb.begin(), nb.end(), lanes_[next].id()) != nb.end()) {
      s = s * lanes_[next].length() / cur.length();
    } else {
      total += std::max(0.0, cur.length() - s);
      s = 0.0;
    }
  }
  total += std::max(0.0, s_to - s);
  return total;
}

// ---------------------------------------------------------------------------
// Scene

std::optional<std::size_t> Scene::index_of(int agent_id) const {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (agents[i].agent_id == agent_id) return i;
  }
  return std::nullopt;
}

std::size_t Scene::require_index(int agent_id) const {
  auto idx = index_of(agent_id);
  if (!idx) throw Error("unknown agent id " + std::to_string(agent_id));
  return *idx;
}

void validate(const Scene& scene) {
  if (scene.horizon_steps < 2) throw Error("scene: horizon_steps must be >= 2");
  if (!(scene.dt_phys > 0.0)) throw Error("scene: dt_phys must be positive");
  if (scene.map.empty()) throw Error("scene: map has no lanes");
  if (scene.ego_index >= scene.agents.size()) throw Error("scene: ego_index out of range");
  std::unordered_set<int> ids;
  std::size_t egos = 0;
  for (const AgentState& a : scene.agents) {
    validate(a);
    if (!ids.insert(a.agent_id).second) throw Error("scene: duplicate agent id");
    if (a.is_ego) ++egos;
    if (scene.map.signed_offroad_distance(a.position) > 1e-9) {
      throw Error("scene: agent " + std::to_string(a.agent_id) + " starts off the drivable region");
    }
  }
  if (egos != 1 || !scene.agents[scene.ego_index].is_ego) {
    throw Error("scene: exactly one ego agent required at ego_index");
  }
}

// ---------------------------------------------------------------------------
// Trajectories

JointTrajectory::JointTrajectory(std::size_t agents, std::size_t steps)
    : agents_(agents), steps_(steps), positions_(agents * steps, Vec2::Zero()) {}

bool JointTrajectory::all_finite() const {
  return std::all_of(positions_.begin(), positions_.end(), [](const Vec2& p) { return p.allFinite(); });
}

std::vector<AgentKinematics> derive_kinematics(const JointTrajectory& traj, double dt,
                                               std::span<const double> initial_headings) {
  const std::size_t H = traj.steps();
  if (H < 2) throw Error("derive_kinematics: need at least 2 steps");
  if (!(dt > 0.0)) throw Error("derive_kinematics: dt must be positive");
  std::vector<AgentKinematics> out(traj.agents());
  for (std::size_t i = 0; i < traj.agents(); ++i) {
    auto p = traj.agent(i);
    AgentKinematics& k = out[i];
    k.speed.resize(H);
    k.heading.resize(H);
    k.accel.assign(H, 0.0);
    k.lat_accel.assign(H, 0.0);
    double held = i < initial_headings.size() ? initial_headings[i] : 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      Vec2 disp;
      double span_t;
      if (h == 0) {
        disp = p[1] - p[0];
        span_t = dt;
      } else if (h == H - 1) {
        disp = p[H - 1] - p[H - 2];
        span_t = dt;
      } else {
        disp = p[h + 1] - p[h - 1];
        span_t = 2.0 * dt;
      }
      k.speed[h] = disp.norm() / span_t;
      if (disp.norm() >= 1e-6) held = std::atan2(disp.y(), disp.x());
      k.heading[h] = held;
    }
    if (H >= 3) {
      for (std::size_t h = 0; h < H; ++h) {
        double dv, dth, span_t;
        if (h == 0) {
          dv = k.speed[1] - k.speed[0];
          dth = normalize_angle(k.heading[1] - k.heading[0]);
          span_t = dt;
        } else if (h == H - 1) {
          dv = k.speed[H - 1] - k.speed[H - 2];
          dth = normalize_angle(k.heading[H - 1] - k.heading[H - 2]);
          span_t = dt;
        } else {
          dv = k.speed[h + 1] - k.speed[h - 1];
          dth = normalize_angle(k.heading[h + 1] - k.heading[h - 1]);
          span_t = 2.0 * dt;
        }
        k.accel[h] = dv / span_t;
        k.lat_accel[h] = k.speed[h] * dth / span_t;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Footprint geometry

std::array<Vec2, 4> box_corners(const AgentState& s) {
  const Vec2 f = 0.5 * s.length * s.forward();
  const Vec2 l = 0.5 * s.width * s.left();
  return {s.position + f + l, s.position - f + l, s.position - f - l, s.position + f - l};
}

namespace {

struct Interval {
  double lo, hi;
};

Interval project_box(const std::array<Vec2, 4>& corners, const Vec2& axis) {
  Interval iv{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Vec2& c : corners) {
    const double v = c.dot(axis);
    iv.lo = std::min(iv.lo, v);
    iv.hi = std::max(iv.hi, v);
  }
  return iv;
}

}  // namespace

Contact box_contact(const AgentState& a, const AgentState& b) {
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  const std::array<Vec2, 4> axes{a.forward(), a.left(), b.forward(), b.left()};
  Contact contact;
  contact.depth = std::numeric_limits<double>::infinity();
  for (const Vec2& axis : axes) {
    const Interval ia = project_box(ca, axis);
    const Interval ib = project_box(cb, axis);
    if (ia.hi < ib.lo || ib.hi < ia.lo) {
      return Contact{};
    }
    const double depth = std::min(ia.hi - ib.lo, ib.hi - ia.lo);
    if (depth < contact.depth) {
      contact.depth = depth;
      contact.normal = axis;
    }
  }
  contact.overlapping = true;
  if ((b.position - a.position).dot(contact.normal) < 0.0) contact.normal = -contact.normal;
  return contact;
}

bool oriented_box_overlap(const AgentState& a, const AgentState& b) {
  return box_contact(a, b).overlapping;
}

double box_distance(const AgentState& a, const AgentState& b) {
  if (oriented_box_overlap(a, b)) return 0.0;
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, point_segment_distance(ca[i], cb[j], cb[(j + 1) % 4]));
      best = std::min(best, point_segment_distance(cb[i], ca[j], ca[(j + 1) % 4]));
    }
  }
  return best;
}

}  // namespace scenforge
