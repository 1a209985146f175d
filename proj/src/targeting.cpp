#include "scenforge/targeting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scenforge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<LaneMatch> agent_lane(const Scene& scene, std::size_t i) {
  const AgentState& a = scene.agents[i];
  return scene.map.associate(a.position, a.heading);
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }
bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

double path_distance(std::span<const Vec2> path, const Vec2& p) {
  double best = kInf;
  for (std::size_t h = 0; h + 1 < path.size(); ++h) {
    const Vec2 d = path[h + 1] - path[h];
    const double len2 = d.squaredNorm();
    double t = len2 > 0.0 ? (p - path[h]).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, (path[h] + t * d - p).norm());
  }
  if (path.size() == 1) best = (path[0] - p).norm();
  return best;
}

std::vector<Vec2> with_initial(const Scene& scene, const JointTrajectory& ref, std::size_t i) {
  std::vector<Vec2> out{scene.agents[i].position};
  for (const Vec2& p : ref.agent(i)) out.push_back(p);
  return out;
}

// Strictly successor-connected forward distance (no lane changes).
std::optional<double> ahead_on_lane(const LaneGraphMap& map, std::size_t from, double s_from, std::size_t to,
                                    double s_to, double max_distance) {
  if (from == to && s_to >= s_from) return s_to - s_from;
  double travelled = map.lane(from).length() - s_from;
  std::size_t cur = from;
  for (int depth = 0; depth < 8 && travelled <= max_distance; ++depth) {
    const auto& succ = map.lane(cur).successors();
    if (succ.empty()) return std::nullopt;
    const auto next = map.index_of(succ.front());
    if (!next) return std::nullopt;
    for (int sid : succ) {
      const auto idx = map.index_of(sid);
      if (idx && *idx == to) return travelled + s_to;
    }
    cur = *next;
    travelled += map.lane(cur).length();
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(Rejection r) {
  switch (r) {
    case Rejection::accepted: return "accepted";
    case Rejection::off_drivable: return "off_drivable";
    case Rejection::no_lane_association: return "no_lane_association";
    case Rejection::no_route_conflict: return "no_route_conflict";
    case Rejection::static_non_blocking: return "static_non_blocking";
  }
  return "unknown";
}

bool FeasibilityMask::accepted(int id) const {
  const auto it = reason.find(id);
  return it != reason.end() && it->second == Rejection::accepted;
}

std::vector<int> FeasibilityMask::accepted_ids() const {
  std::vector<int> out;
  for (const auto& [id, r] : reason) {
    if (r == Rejection::accepted) out.push_back(id);
  }
  return out;
}

FeasibilityMask semantic_filter(std::span<const int> candidates, const Scene& scene, const JointTrajectory& ref,
                                const TargetingParams& p) {
  if (ref.agents() != scene.num_agents()) throw Error("semantic_filter: reference does not cover the scene");
  FeasibilityMask mask;
  const std::size_t e = scene.ego_index;
  const auto ego_lane = agent_lane(scene, e);
  const std::vector<Vec2> ego_path = with_initial(scene, ref, e);
  const double dt = scene.dt_phys;

  for (int id : candidates) {
    const std::size_t i = scene.require_index(id);
    const AgentState& a = scene.agents[i];
    Rejection r = Rejection::accepted;

    // (a) map consistency
    const auto lane = agent_lane(scene, i);
    if (scene.map.signed_offroad_distance(a.position) > 0.0) {
      r = Rejection::off_drivable;
    } else if (!lane ||
               std::abs(lane->projection.lateral) > scene.map.lane(lane->lane_index).half_width() + p.lane_margin) {
      r = Rejection::no_lane_association;
    }

    // (c) dynamic relevance
    if (r == Rejection::accepted) {
      const std::vector<Vec2> path = with_initial(scene, ref, i);
      double travelled = 0.0;
      for (std::size_t h = 0; h + 1 < path.size(); ++h) travelled += (path[h + 1] - path[h]).norm();
      const double mean_speed = travelled / (dt * static_cast<double>(ref.steps()));
      bool blocking = false;
      if (ego_lane) {
        const auto ahead = ahead_on_lane(scene.map, ego_lane->lane_index, ego_lane->projection.s, lane->lane_index,
                                         lane->projection.s, p.blocking_ahead);
        blocking = ahead && *ahead > 0.0 && *ahead <= p.blocking_ahead;
      }
      if (mean_speed < p.min_mean_speed && !blocking) r = Rejection::static_non_blocking;
    }

    // (b) interaction potential
    if (r == Rejection::accepted) {
      bool conflict = false;
      if (ego_lane && contains(scene.map.adjacent_lanes(ego_lane->lane_index), lane->lane_index)) conflict = true;
      for (std::size_t h = 0; h <= ref.steps() && !conflict; ++h) {
        const Vec2 q = h == 0 ? a.position : ref.at(i, h - 1);
        conflict = path_distance(ego_path, q) <= p.d_conflict;
      }
      if (!conflict) r = Rejection::no_route_conflict;
    }
    mask.reason[id] = r;
  }
  return mask;
}

std::vector<int> intersect_support(std::span<const int> s_top, const FeasibilityMask& mask) {
  std::vector<int> out;
  for (int id : s_top) {
    if (mask.accepted(id)) out.push_back(id);
  }
  return out;
}

bool Skeleton::in_coalition(int id) const { return contains(coalition, id); }

double lane_headway(const Scene& scene, std::size_t a, std::size_t b) {
  const auto la = agent_lane(scene, a);
  const auto lb = agent_lane(scene, b);
  if (!la || !lb) return kInf;
  double best = kInf;
  if (const auto d = scene.map.route_distance(la->lane_index, la->projection.s, lb->lane_index, lb->projection.s))
    best = std::min(best, *d);
  if (const auto d = scene.map.route_distance(lb->lane_index, lb->projection.s, la->lane_index, la->projection.s))
    best = std::min(best, *d);
  return best;
}

Skeleton build_skeleton(std::span<const int> support, const Scene& scene, const JointTrajectory& ref,
                        const TargetingParams& p) {
  if (support.empty()) throw Error("no feasible adversaries");
  if (p.k_near < 1 || p.k_far < 0) throw Error("build_skeleton: k_near must be >= 1 and k_far >= 0");
  (void)ref;
  const std::size_t e = scene.ego_index;
  const int ego_id = scene.agents[e].agent_id;
  const Vec2 ego_pos = scene.agents[e].position;
  auto dist = [&](int id) { return (scene.agents[scene.require_index(id)].position - ego_pos).norm(); };

  std::vector<int> s(support.begin(), support.end());
  for (int id : s) {
    if (id == ego_id) throw Error("build_skeleton: the ego cannot be an adversary");
  }
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());

  std::vector<int> by_dist = s;
  std::stable_sort(by_dist.begin(), by_dist.end(), [&](int a, int b) { return dist(a) < dist(b); });

  Skeleton sk;
  sk.ego_id = ego_id;
  for (std::size_t i = 0; i < by_dist.size() && static_cast<int>(i) < p.k_near; ++i) sk.near.push_back(by_dist[i]);
  const int primary = sk.near.front();

  const auto ego_lane = agent_lane(scene, e);
  std::vector<std::size_t> ego_adjacent;
  if (ego_lane) ego_adjacent = scene.map.adjacent_lanes(ego_lane->lane_index);

  std::vector<int> s_far;
  for (int id : s) {
    if (contains(sk.near, id) || dist(id) <= p.tau_dist) continue;
    const auto lane = agent_lane(scene, scene.require_index(id));
    if (lane && contains(ego_adjacent, lane->lane_index)) continue;
    s_far.push_back(id);
  }
  std::stable_sort(s_far.begin(), s_far.end(), [&](int a, int b) { return dist(a) > dist(b); });
  std::vector<int> far_candidates;
  for (std::size_t i = 0; i < s_far.size() && static_cast<int>(i) < p.k_far; ++i) far_candidates.push_back(s_far[i]);

  auto headway = [&](int a, int b) { return lane_headway(scene, scene.require_index(a), scene.require_index(b)); };

  std::vector<ChainEdge> far_edges;
  for (int f : far_candidates) {
    // link to the near agent with the shortest headway
    int n_best = -1;
    double h_best = kInf;
    for (int n : sk.near) {
      const double h = headway(f, n);
      if (h < h_best) {
        h_best = h;
        n_best = n;
      }
    }
    if (n_best >= 0 && h_best <= p.tau_long) {
      sk.far.push_back(f);
      far_edges.push_back({f, n_best});
      continue;
    }
    int m_best = -1;
    int m_target = -1;
    double cost_best = kInf;
    for (int m : s) {
      if (contains(sk.near, m) || contains(far_candidates, m) || contains(sk.intermediates, m)) continue;
      const double h1 = headway(f, m);
      if (h1 > p.tau_long) continue;
      for (int n : sk.near) {
        const double h2 = headway(m, n);
        if (h2 > p.tau_long) continue;
        if (h1 + h2 < cost_best) {
          cost_best = h1 + h2;
          m_best = m;
          m_target = n;
        }
      }
    }
    if (m_best >= 0) {
      sk.far.push_back(f);
      sk.intermediates.push_back(m_best);
      far_edges.push_back({f, m_best});
      far_edges.push_back({m_best, m_target});
    }
  }

  sk.fallback = sk.far.empty();
  sk.chain = far_edges;
  for (int n : sk.near) sk.chain.push_back({n, n == primary ? ego_id : primary});
  sk.coalition = sk.near;
  sk.coalition.insert(sk.coalition.end(), sk.intermediates.begin(), sk.intermediates.end());
  sk.coalition.insert(sk.coalition.end(), sk.far.begin(), sk.far.end());
  std::sort(sk.coalition.begin(), sk.coalition.end());
  sk.mask.assign(scene.num_agents(), 0);
  for (int id : sk.coalition) sk.mask[scene.require_index(id)] = 1;
  return sk;
}

Eigen::VectorXd apply_mask(const Skeleton& skel, const Eigen::VectorXd& v, Eigen::Index block) {
  if (v.size() != static_cast<Eigen::Index>(skel.mask.size()) * block) throw Error("apply_mask: size mismatch");
  Eigen::VectorXd out = v;
  for (std::size_t i = 0; i < skel.mask.size(); ++i) {
    if (!skel.mask[i]) out.segment(static_cast<Eigen::Index>(i) * block, block).setZero();
  }
  return out;
}

namespace {

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Leg {
  std::size_t lane = 0;
  double s0 = 0.0;
  double s1 = 0.0;
  std::optional<std::size_t> blend_from;  // lane left by a lane change at the start of this leg
  double blend_s0 = 0.0;
  double length() const { return s1 - s0; }
};

// Lane path as a function of travelled distance u.
class LanePath {
 public:
  LanePath(const LaneGraphMap& map, std::vector<Leg> legs, Vec2 initial_offset, double change_length)
      : map_(map), legs_(std::move(legs)), offset_(std::move(initial_offset)), change_(change_length) {}

  double length() const {
    double u = 0.0;
    for (const Leg& l : legs_) u += l.length();
    return u;
  }

  Vec2 at(double u) const {
    Vec2 p = Vec2::Zero();
    double u0 = 0.0;
    for (std::size_t k = 0; k < legs_.size(); ++k) {
      const Leg& l = legs_[k];
      const bool last = k + 1 == legs_.size();
      if (u <= u0 + l.length() || last) {
        const double du = std::min(u - u0, l.length());
        p = map_.lane(l.lane).point_at(l.s0 + du);
        if (l.blend_from) {
          const double b = smoothstep(du / change_);
          const Vec2 q = map_.lane(*l.blend_from).point_at(l.blend_s0 + du);
          p = (1.0 - b) * q + b * p;
        }
        break;
      }
      u0 += l.length();
    }
    return p + (1.0 - smoothstep(u / change_)) * offset_;
  }

 private:
  const LaneGraphMap& map_;
  std::vector<Leg> legs_;
  Vec2 offset_;
  double change_;
};

bool is_successor(const Lane& a, int id) {
  return std::find(a.successors().begin(), a.successors().end(), id) != a.successors().end();
}

// Legs following `route` from (route[0], s_from) to s_to on the last lane, then
// extended along first successors by `extra` metres.
std::vector<Leg> route_legs(const LaneGraphMap& map, const std::vector<std::size_t>& route, double s_from,
                            double s_to, double extra) {
  std::vector<Leg> legs;
  Leg cur{route[0], s_from, s_from, std::nullopt, 0.0};
  for (std::size_t k = 0; k + 1 < route.size(); ++k) {
    const Lane& a = map.lane(route[k]);
    const Lane& b = map.lane(route[k + 1]);
    if (is_successor(a, b.id())) {
      cur.s1 = a.length();
      legs.push_back(cur);
      cur = Leg{route[k + 1], 0.0, 0.0, std::nullopt, 0.0};
    } else {
      const double s = cur.s0;
      const double s_b = std::clamp(b.project(a.point_at(s)).s, 0.0, b.length());
      cur.s1 = s;
      if (cur.length() > 0.0) legs.push_back(cur);
      cur = Leg{route[k + 1], s_b, s_b, route[k], s};
    }
  }
  cur.s1 = std::max(cur.s0, s_to);
  double remaining = extra;
  const double room = map.lane(cur.lane).length() - cur.s1;
  const double take = std::clamp(room, 0.0, remaining);
  cur.s1 += take;
  remaining -= take;
  legs.push_back(cur);
  std::size_t lane = cur.lane;
  for (int depth = 0; depth < 8 && remaining > 0.0; ++depth) {
    const auto& succ = map.lane(lane).successors();
    if (succ.empty()) break;
    const auto next = map.index_of(succ.front());
    if (!next) break;
    lane = *next;
    const double len = std::min(map.lane(lane).length(), remaining);
    legs.push_back({lane, 0.0, len, std::nullopt, 0.0});
    remaining -= len;
  }
  return legs;
}

// Dense polyline samples of a path and their arc lengths.
struct Polyline {
  std::vector<Vec2> pts;
  std::vector<double> arc;

  Vec2 at(double s) const {
    if (s <= 0.0) return pts.front();
    if (s >= arc.back()) return pts.back();
    const auto it = std::upper_bound(arc.begin(), arc.end(), s);
    const std::size_t j = static_cast<std::size_t>(it - arc.begin());
    const double seg = arc[j] - arc[j - 1];
    const double t = seg > 0.0 ? (s - arc[j - 1]) / seg : 0.0;
    return pts[j - 1] + t * (pts[j] - pts[j - 1]);
  }
};

Polyline sample(const LanePath& path, double u_end, double du) {
  Polyline out;
  const int n = std::max(1, static_cast<int>(std::ceil(u_end / du)));
  for (int k = 0; k <= n; ++k) {
    const Vec2 p = path.at(u_end * k / n);
    out.arc.push_back(out.pts.empty() ? 0.0 : out.arc.back() + (p - out.pts.back()).norm());
    out.pts.push_back(p);
  }
  return out;
}

}  // namespace

namespace {

// Arc length and distance of the polyline sample nearest to q.
std::pair<double, double> nearest_on(const Polyline& line, const Vec2& q) {
  double best = kInf;
  double arc = 0.0;
  for (std::size_t k = 0; k < line.pts.size(); ++k) {
    const double d = (line.pts[k] - q).norm();
    if (d < best) {
      best = d;
      arc = line.arc[k];
    }
  }
  return {arc, best};
}

// Constant acceleration from v0 so that `arc` is covered at t_r (accel limited,
// speed kept in [0, v_max]); speed is held after t_r.
void fill_profile(JointTrajectory& out, std::size_t agent, const Polyline& line, double v0, double arc, double t_r,
                  double dt, const TargetingParams& p) {
  const double a = std::clamp(2.0 * (arc - v0 * t_r) / (t_r * t_r), -p.anchor_accel, p.anchor_accel);
  double u = 0.0;
  double v = std::min(v0, p.v_max);
  for (std::size_t h = 0; h < out.steps(); ++h) {
    const double t = static_cast<double>(h) * dt;
    const double acc = t < t_r - 1e-9 ? a : 0.0;
    const double v_next = std::clamp(v + acc * dt, 0.0, p.v_max);
    u += 0.5 * (v + v_next) * dt;
    v = v_next;
    out.at(agent, h) = line.at(u);
  }
}

}  // namespace

AnchorPlan make_anchor(const Skeleton& skel, const Scene& scene, const JointTrajectory& ref,
                       const TargetingParams& p) {
  if (ref.agents() != scene.num_agents()) throw Error("make_anchor: reference does not cover the scene");
  const std::size_t H = ref.steps();
  const double dt = scene.dt_phys;
  AnchorPlan plan;
  plan.clean = ref;
  if (skel.coalition.empty() || skel.chain.empty()) return plan;

  const std::size_t h_mid = std::max<std::size_t>(1, H / 2) - 1;
  const double t_end = static_cast<double>(H) * dt;

  struct Pending {
    std::size_t agent;
    Vec2 target;
  };
  std::vector<Pending> unplanned;
  int handled = 0;

  for (const ChainEdge& edge : skel.chain) {
    const std::size_t a = scene.require_index(edge.from);
    const std::size_t b = scene.require_index(edge.to);
    const AgentState& sa = scene.agents[a];

    double closest = kInf;
    for (std::size_t h = 0; h < H; ++h) closest = std::min(closest, (ref.at(a, h) - ref.at(b, h)).norm());
    const Vec2 q = ref.at(b, h_mid);
    if (closest <= p.d_goal) {
      ++handled;
      continue;
    }
    const auto la = scene.map.associate(sa.position, sa.heading);
    if (!la) {
      plan.dropped.push_back(edge);
      unplanned.push_back({a, q});
      continue;
    }
    const double lane_width = scene.map.lane(la->lane_index).width();
    const double change = std::max(p.min_lane_change, 1.2 * std::sqrt(6.0 * lane_width / p.kappa_max));
    const Vec2 offset = sa.position - scene.map.lane(la->lane_index).point_at(la->projection.s);
    const double extra = p.v_max * t_end + change;

    // Rendezvous on the target's path at the horizon midpoint, via the lane graph.
    const Vec2 q_prev = h_mid == 0 ? scene.agents[b].position : ref.at(b, h_mid - 1);
    const Vec2 q_dir = q - q_prev;
    const double q_heading = q_dir.norm() > 1e-6 ? std::atan2(q_dir.y(), q_dir.x()) : scene.agents[b].heading;
    const auto lq = scene.map.associate(q, q_heading);
    std::optional<std::vector<std::size_t>> route;
    if (lq) route = scene.map.route(la->lane_index, la->projection.s, lq->lane_index, lq->projection.s);

    std::optional<Polyline> line;
    double arc = 0.0;
    double t_r = static_cast<double>(h_mid + 1) * dt;
    if (route) {
      const LanePath path(scene.map, route_legs(scene.map, *route, la->projection.s, lq->projection.s, extra),
                          offset, change);
      line = sample(path, path.length(), 0.25);
      double u_route = 0.0;
      for (const Leg& l : route_legs(scene.map, *route, la->projection.s, lq->projection.s, 0.0)) {
        u_route += l.length();
      }
      arc = sample(path, u_route, 0.25).arc.back();
    } else {
      // Otherwise meet the target where its path crosses the attacker's own lane.
      const std::vector<std::size_t> own{la->lane_index};
      const LanePath path(scene.map, route_legs(scene.map, own, la->projection.s, la->projection.s, extra), offset,
                          change);
      Polyline own_line = sample(path, path.length(), 0.25);
      const double reach = scene.map.lane(la->lane_index).half_width() + 1.0;
      std::optional<std::size_t> best_h;
      for (std::size_t h = 0; h < H; ++h) {
        const auto [u, d] = nearest_on(own_line, ref.at(b, h));
        const double diff = std::abs(static_cast<double>(h) - static_cast<double>(h_mid));
        if (d <= reach && (!best_h || diff < std::abs(static_cast<double>(*best_h) - static_cast<double>(h_mid)))) {
          best_h = h;
          arc = u;
        }
      }
      if (best_h) {
        line = std::move(own_line);
        t_r = static_cast<double>(*best_h + 1) * dt;
      }
    }
    if (!line) {
      plan.dropped.push_back(edge);
      unplanned.push_back({a, q});
      continue;
    }
    fill_profile(plan.clean, a, *line, sa.speed, arc, t_r, dt, p);
    plan.replanned.push_back(edge.from);
    ++handled;
  }

  if (handled == 0) {
    plan.coarse = true;
    const double t_mid = static_cast<double>(h_mid + 1) * dt;
    for (const Pending& u : unplanned) {
      const Vec2 p0 = scene.agents[u.agent].position;
      const Vec2 d = u.target - p0;
      const double len = d.norm();
      const Vec2 dir = len > 1e-9 ? Vec2(d / len) : scene.agents[u.agent].forward();
      const double v = std::min(p.v_max, len / t_mid);
      std::vector<Vec2> line(H);
      bool on_road = true;
      for (std::size_t h = 0; h < H && on_road; ++h) {
        line[h] = p0 + dir * v * static_cast<double>(h + 1) * dt;
        on_road = scene.map.signed_offroad_distance(line[h]) <= 0.0;
      }
      // A line leaving the drivable area keeps the reference instead.
      if (!on_road) continue;
      for (std::size_t h = 0; h < H; ++h) plan.clean.at(u.agent, h) = line[h];
      plan.replanned.push_back(scene.agents[u.agent].agent_id);
    }
  }
  std::sort(plan.replanned.begin(), plan.replanned.end());
  return plan;
}

nlohmann::json skeleton_to_json(const Skeleton& skel, int anchor_index, const FeasibilityMask& mask) {
  nlohmann::json doc;
  doc["coalition"] = skel.coalition;
  doc["near"] = skel.near;
  doc["intermediates"] = skel.intermediates;
  doc["far"] = skel.far;
  doc["fallback"] = skel.fallback;
  nlohmann::json chain = nlohmann::json::array();
  for (const ChainEdge& e : skel.chain) chain.push_back({e.from, e.to});
  doc["chain"] = chain;
  doc["mask"] = skel.mask;
  doc["anchor_index"] = anchor_index;
  nlohmann::json rej = nlohmann::json::object();
  for (const auto& [id, r] : mask.reason) rej[std::to_string(id)] = to_string(r);
  doc["rejections"] = rej;
  return doc;
}

}  // namespace scenforge
