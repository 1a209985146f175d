#include "scenforge/simloop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace scenforge {

namespace {

constexpr double kComfortBrake = 1.0;  // coasting decel when the ego has no lane

Vec2 lane_point_ahead(const LaneGraphMap& map, std::size_t lane, double s, double dist) {
  for (int depth = 0; depth < 8; ++depth) {
    const Lane& l = map.lane(lane);
    if (s + dist <= l.length() || l.successors().empty()) return l.point_at(s + dist);
    const auto next = map.index_of(l.successors().front());
    if (!next) return l.point_at(s + dist);
    dist -= l.length() - s;
    s = 0.0;
    lane = *next;
  }
  return map.lane(lane).point_at(s + dist);
}

// Switches to the first successor once the agent has run past the lane end.
std::size_t advance_lane(const LaneGraphMap& map, std::size_t lane, const Vec2& p) {
  for (int depth = 0; depth < 4; ++depth) {
    const Lane& l = map.lane(lane);
    if (l.successors().empty()) return lane;
    if (l.project(p).s < l.length() - 0.5) return lane;
    const auto next = map.index_of(l.successors().front());
    if (!next) return lane;
    lane = *next;
  }
  return lane;
}

struct AlongLane {
  double s = 0.0;
  double lateral = 0.0;
  double heading = 0.0;
  bool valid = false;
};

// Coordinate of p along lane and its first successor.
AlongLane along(const LaneGraphMap& map, std::size_t lane, const Vec2& p) {
  const Lane& l = map.lane(lane);
  const LaneProjection pr = l.project(p);
  AlongLane out{pr.s, pr.lateral, std::atan2(pr.tangent.y(), pr.tangent.x()), true};
  const bool past_end = pr.s >= l.length() - 1e-9 && (p - pr.point).dot(pr.tangent) > 1e-9;
  if (past_end && !l.successors().empty()) {
    if (const auto next = map.index_of(l.successors().front())) {
      const LaneProjection q = map.lane(*next).project(p);
      out = {l.length() + q.s, q.lateral, std::atan2(q.tangent.y(), q.tangent.x()), true};
    }
  }
  return out;
}

void step_bicycle(AgentState& s, double accel, double steer, double dt) {
  const double wheelbase = 0.6 * s.length;
  const double v_next = std::max(0.0, s.speed + accel * dt);
  const double v_mid = 0.5 * (s.speed + v_next);
  s.heading = normalize_angle(s.heading + v_mid * std::tan(steer) / wheelbase * dt);
  s.position += v_mid * dt * s.forward();
  s.speed = v_next;
}

}  // namespace

std::string to_string(PolicyKind k) { return k == PolicyKind::idm ? "idm" : "lane_graph"; }

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "idm") return PolicyKind::idm;
  if (s == "lane_graph" || s == "lg") return PolicyKind::lane_graph;
  throw Error("unknown policy '" + s + "'");
}

std::vector<double> EgoPolicyParams::vector() const {
  if (kind == PolicyKind::idm) return {v0, T_h, s0, a, b};
  return {target_speed, steering_gain, lookahead, brake_ttc};
}

void EgoPolicyParams::set_vector(std::span<const double> v) {
  if (v.size() != vector().size()) throw Error("policy vector has the wrong size");
  if (kind == PolicyKind::idm) {
    v0 = v[0];
    T_h = v[1];
    s0 = v[2];
    a = v[3];
    b = v[4];
  } else {
    target_speed = v[0];
    steering_gain = v[1];
    lookahead = v[2];
    brake_ttc = v[3];
  }
}

std::vector<std::pair<double, double>> EgoPolicyParams::bounds() const {
  if (kind == PolicyKind::idm) return {{5.0, 20.0}, {0.5, 3.0}, {1.0, 6.0}, {0.5, 3.0}, {1.0, 4.0}};
  return {{5.0, 20.0}, {0.3, 2.0}, {4.0, 20.0}, {0.5, 4.0}};
}

void validate(const EgoPolicyParams& p) {
  for (double x : {p.v0, p.T_h, p.s0, p.a, p.b, p.target_speed, p.steering_gain, p.lookahead, p.brake_ttc}) {
    if (!(x > 0.0) || !std::isfinite(x)) throw Error("policy parameters must be positive and finite");
  }
}

nlohmann::json policy_to_json(const EgoPolicyParams& p) {
  return {{"kind", to_string(p.kind)}, {"v0", p.v0}, {"T_h", p.T_h}, {"s0", p.s0}, {"a", p.a}, {"b", p.b},
          {"target_speed", p.target_speed}, {"steering_gain", p.steering_gain}, {"lookahead", p.lookahead},
          {"brake_ttc", p.brake_ttc}};
}

EgoPolicyParams policy_from_json(const nlohmann::json& d) {
  EgoPolicyParams p;
  p.kind = policy_kind_from_string(d.at("kind").get<std::string>());
  p.v0 = d.value("v0", p.v0);
  p.T_h = d.value("T_h", p.T_h);
  p.s0 = d.value("s0", p.s0);
  p.a = d.value("a", p.a);
  p.b = d.value("b", p.b);
  p.target_speed = d.value("target_speed", p.target_speed);
  p.steering_gain = d.value("steering_gain", p.steering_gain);
  p.lookahead = d.value("lookahead", p.lookahead);
  p.brake_ttc = d.value("brake_ttc", p.brake_ttc);
  validate(p);
  return p;
}

double idm_accel(double v, double gap, double dv, const EgoPolicyParams& p, double b_max) {
  gap = std::max(gap, 0.1);
  const double s_star = p.s0 + std::max(0.0, v * p.T_h + v * dv / (2.0 * std::sqrt(p.a * p.b)));
  const double acc = p.a * (1.0 - std::pow(v / p.v0, 4) - (s_star / gap) * (s_star / gap));
  return std::clamp(acc, -b_max, p.a);
}

Leader find_leader(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                   std::span<const AgentState> others) {
  Leader best;
  const AlongLane e = along(map, lane, ego.position);
  const double hw = map.lane(lane).half_width();
  for (const AgentState& o : others) {
    const AlongLane q = along(map, lane, o.position);
    if (std::abs(q.lateral) >= hw + 0.5 * o.width - 0.3) continue;
    const double ds = q.s - e.s;
    if (ds <= 0.0) continue;
    const double gap = ds - 0.5 * (ego.length + o.length);
    if (gap < best.gap) {
      best.gap = gap;
      best.dv = ego.speed - o.speed * std::cos(o.heading - q.heading);
      best.agent_id = o.agent_id;
    }
  }
  return best;
}

Leader find_conflict(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                     std::span<const AgentState> others, double window, double horizon, double step) {
  Leader best;
  const AlongLane e = along(map, lane, ego.position);
  const double hw = map.lane(lane).half_width();
  const double v = std::max(ego.speed, 0.5);
  for (const AgentState& o : others) {
    const AlongLane now = along(map, lane, o.position);
    if (std::abs(now.lateral) < hw + 0.5 * o.width - 0.3) continue;  // already a regular leader candidate
    const Vec2 vel = o.velocity();
    for (double t = step; t <= horizon + 1e-9; t += step) {
      const AlongLane q = along(map, lane, o.position + vel * t);
      if (std::abs(q.lateral) >= hw + 0.5 * o.width - 0.3) continue;
      const double ds = q.s - e.s;
      if (ds <= 0.0) continue;
      const double gap = ds - 0.5 * (ego.length + o.length);
      if (std::abs(std::max(gap, 0.0) / v - t) > window) continue;
      if (gap < best.gap) {
        best.gap = gap;
        best.dv = ego.speed - o.speed * std::cos(o.heading - q.heading);
        best.agent_id = o.agent_id;
      }
      break;
    }
  }
  return best;
}

double pure_pursuit(const AgentState& ego, std::size_t lane, const LaneGraphMap& map, double lookahead, double gain,
                    double max_steer) {
  const double s = map.lane(lane).project(ego.position).s;
  const Vec2 target = lane_point_ahead(map, lane, s, lookahead);
  const Vec2 d = target - ego.position;
  const double x = d.dot(ego.forward());
  const double y = d.dot(ego.left());
  const double l2 = std::max(x * x + y * y, 1e-6);
  const double curvature = 2.0 * y / l2;
  return std::clamp(gain * std::atan(0.6 * ego.length * curvature), -max_steer, max_steer);
}

EgoAction lane_graph_act(const AgentState& ego, std::size_t lane, const LaneGraphMap& map,
                         std::span<const AgentState> others, const EgoPolicyParams& p, const SimConfig& cfg) {
  EgoAction act;
  act.steering = pure_pursuit(ego, lane, map, p.lookahead, p.steering_gain, cfg.max_steer);
  act.accel = std::clamp(0.8 * (p.target_speed - ego.speed), -3.0, 2.0);
  const AlongLane e = along(map, lane, ego.position);
  const double hw = map.lane(lane).half_width();
  double min_ttc = 1e9;
  for (const AgentState& o : others) {
    const AlongLane q = along(map, lane, o.position);
    if (std::abs(q.lateral) >= hw + 0.5 * o.width - 0.3 || q.s <= e.s) continue;
    const double gap = std::max(0.0, q.s - e.s - 0.5 * (ego.length + o.length));
    const double closing = ego.speed - o.speed * std::cos(o.heading - q.heading);
    if (closing > 1e-6) min_ttc = std::min(min_ttc, gap / closing);
  }
  if (min_ttc < p.brake_ttc) act.accel = -cfg.b_max;
  return act;
}

constexpr double kConflictHorizon = 4.0;  // s

EgoController::EgoController(EgoPolicyParams params, SimConfig cfg) : p_(params), cfg_(cfg) { validate(p_); }

EgoAction EgoController::act(int step, const AgentState& ego, std::span<const AgentState> others,
                             const LaneGraphMap& map) {
  if (!lane_ || step % std::max(1, cfg_.replan_every) == 0) {
    const auto m = map.associate(ego.position, ego.heading);
    if (m && std::abs(m->projection.lateral) <= map.lane(m->lane_index).half_width() + 1.0) {
      lane_ = m->lane_index;
    } else {
      lane_.reset();
    }
  }
  if (lane_) lane_ = advance_lane(map, *lane_, ego.position);
  if (!lane_) {
    lost_lane_ = true;
    return {-kComfortBrake, 0.0};
  }
  if (p_.kind == PolicyKind::lane_graph) return lane_graph_act(ego, *lane_, map, others, p_, cfg_);
  Leader lead = find_leader(ego, *lane_, map, others);
  const Leader cross = find_conflict(ego, *lane_, map, others, p_.T_h, kConflictHorizon, 0.2);
  if (cross.gap < lead.gap) lead = cross;
  EgoAction act;
  act.accel = idm_accel(ego.speed, lead.gap, lead.dv, p_, cfg_.b_max);
  act.steering = pure_pursuit(ego, *lane_, map, std::max(6.0, 0.8 * ego.speed), 1.0, cfg_.max_steer);
  return act;
}

std::string to_string(ImpactClass c) {
  switch (c) {
    case ImpactClass::none: return "none";
    case ImpactClass::front: return "front";
    case ImpactClass::side: return "side";
    case ImpactClass::rear: return "rear";
  }
  return "none";
}

namespace {

AgentState lerp_state(const AgentState& a, const AgentState& b, double t) {
  AgentState s = b;
  s.position = a.position + t * (b.position - a.position);
  s.heading = a.heading + t * normalize_angle(b.heading - a.heading);
  s.speed = a.speed + t * (b.speed - a.speed);
  return s;
}

}  // namespace

std::pair<AgentState, AgentState> first_contact(const AgentState& ego_prev, const AgentState& other_prev,
                                                const AgentState& ego, const AgentState& other) {
  if (oriented_box_overlap(ego_prev, other_prev)) return {ego_prev, other_prev};
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (oriented_box_overlap(lerp_state(ego_prev, ego, mid), lerp_state(other_prev, other, mid)))
      hi = mid;
    else
      lo = mid;
  }
  return {lerp_state(ego_prev, ego, hi), lerp_state(other_prev, other, hi)};
}

ImpactClass classify_impact(const AgentState& ego, const AgentState& other) {
  const Contact c = box_contact(ego, other);
  const double angle = std::abs(normalize_angle(std::atan2(c.normal.y(), c.normal.x()) - ego.heading));
  const double deg = angle * 180.0 / std::numbers::pi;
  if (deg <= 45.0) return ImpactClass::front;
  if (deg >= 135.0) return ImpactClass::rear;
  return ImpactClass::side;
}

Rollout run_closed_loop(const Scene& scene, const JointTrajectory& env_traj, const EgoPolicyParams& policy,
                        const SimConfig& cfg) {
  const std::size_t N = scene.num_agents();
  const std::size_t H = static_cast<std::size_t>(scene.horizon_steps);
  if (env_traj.agents() != N || env_traj.steps() < H) throw Error("run_closed_loop: env trajectory too short");
  const double dt = scene.dt_phys;
  const std::size_t e = scene.ego_index;

  Rollout r;
  r.dt = dt;
  r.ego_index = e;
  r.frames.reserve(H + 1);
  r.frames.push_back(scene.agents);
  EgoController ego_ctl(policy, cfg);
  std::vector<AgentState> cur = scene.agents;
  std::vector<AgentState> others;

  for (std::size_t h = 0; h < H; ++h) {
    others.clear();
    for (std::size_t i = 0; i < N; ++i) {
      if (i != e) others.push_back(cur[i]);
    }
    const EgoAction cmd = ego_ctl.act(static_cast<int>(h), cur[e], others, scene.map);
    const double accel = std::clamp(cmd.accel, -cfg.b_max, cfg.b_max);
    const double steer = std::clamp(cmd.steering, -cfg.max_steer, cfg.max_steer);
    std::vector<AgentState> next = cur;
    const double v_before = cur[e].speed;
    step_bicycle(next[e], accel, steer, dt);
    r.actions.push_back({(next[e].speed - v_before) / dt, steer});

    for (std::size_t i = 0; i < N; ++i) {
      if (i == e) continue;
      AgentState& a = next[i];
      const Vec2 want = (env_traj.at(i, h) - a.position) / dt;
      const double want_speed = want.norm();
      double heading = a.heading;
      if (want_speed > 0.1) {
        const double dh = normalize_angle(std::atan2(want.y(), want.x()) - a.heading);
        const double max_dh = cfg.env_yaw_rate * dt;
        heading = normalize_angle(a.heading + std::clamp(dh, -max_dh, max_dh));
      }
      const Vec2 fwd(std::cos(heading), std::sin(heading));
      const double target_speed = std::max(0.0, want.dot(fwd));
      const double max_dv = cfg.env_accel_limit * dt;
      const double speed = std::clamp(target_speed, a.speed - max_dv, a.speed + max_dv);
      const double v_mid = 0.5 * (a.speed + std::max(0.0, speed));
      a.position += v_mid * dt * fwd;
      a.heading = heading;
      a.speed = std::max(0.0, speed);
    }

    const int frame = static_cast<int>(h + 1);
    const AgentState& eg = next[e];
    if (!eg.position.allFinite() || !std::isfinite(eg.heading) || !std::isfinite(eg.speed)) {
      r.invalid = true;
      r.terminated_at = frame - 1;
      return r;
    }
    r.frames.push_back(next);
    cur = std::move(next);

    for (std::size_t i = 0; i < N; ++i) {
      const double d = scene.map.signed_offroad_distance(cur[i].position);
      if (d > cfg.offroad_event) {
        r.events.push_back({frame, EventKind::offroad, ImpactClass::none, {cur[i].agent_id}, d});
      }
    }
    // first colliding agent by index order
    for (std::size_t i = 0; i < N; ++i) {
      if (i == e || !oriented_box_overlap(cur[e], cur[i])) continue;
      r.collided = true;
      r.collided_with = cur[i].agent_id;
      const auto& prev = r.frames[r.frames.size() - 2];
      const auto [ce, ci] = first_contact(prev[e], prev[i], cur[e], cur[i]);
      r.impact = classify_impact(ce, ci);
      r.rel_vel = (cur[e].velocity() - cur[i].velocity()).norm();
      r.events.push_back({frame, EventKind::collision, r.impact, {cur[e].agent_id, cur[i].agent_id}, r.rel_vel});
      break;
    }
    r.terminated_at = frame;
    if (r.collided) break;
  }
  return r;
}

JointTrajectory rollout_positions(const Rollout& r, std::size_t steps) {
  if (r.frames.empty()) throw Error("rollout_positions: empty rollout");
  const std::size_t N = r.frames.front().size();
  JointTrajectory out(N, steps);
  for (std::size_t h = 0; h < steps; ++h) {
    const std::size_t f = std::min(h + 1, r.frames.size() - 1);
    for (std::size_t i = 0; i < N; ++i) out.at(i, h) = r.frames[f][i].position;
  }
  return out;
}

nlohmann::json rollout_to_json(const Rollout& r) {
  nlohmann::json doc;
  doc["scenario_id"] = r.scenario_id;
  doc["seed"] = r.seed;
  doc["dt"] = r.dt;
  doc["terminated_at"] = r.terminated_at;
  doc["collided"] = r.collided;
  doc["impact_class"] = to_string(r.impact);
  doc["collided_with"] = r.collided_with;
  doc["invalid"] = r.invalid;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : r.frames) {
    nlohmann::json fr = nlohmann::json::array();
    for (const AgentState& a : f) fr.push_back({a.agent_id, a.position.x(), a.position.y(), a.heading, a.speed});
    frames.push_back(fr);
  }
  doc["frames"] = frames;
  nlohmann::json acts = nlohmann::json::array();
  for (const EgoAction& a : r.actions) acts.push_back({a.accel, a.steering});
  doc["ego_actions"] = acts;
  nlohmann::json events = nlohmann::json::array();
  for (const SimEvent& ev : r.events) {
    nlohmann::json j{{"step", ev.step}, {"participants", ev.participants}, {"value", ev.value}};
    if (ev.kind == EventKind::collision) {
      j["kind"] = "collision";
      j["impact"] = to_string(ev.impact);
    } else {
      j["kind"] = "offroad";
    }
    events.push_back(j);
  }
  doc["events"] = events;
  return doc;
}

JointTrajectory simulate_traffic(const Scene& scene, Rng& rng, const TrafficOptions& opts, const SimConfig& cfg) {
  const std::size_t N = scene.num_agents();
  const std::size_t H = static_cast<std::size_t>(scene.horizon_steps);
  const double dt = scene.dt_phys;
  std::vector<AgentState> cur = scene.agents;
  std::vector<std::optional<std::size_t>> lane(N);
  std::vector<EgoPolicyParams> params(N);
  for (std::size_t i = 0; i < N; ++i) {
    const AgentState& a = cur[i];
    // draws happen unconditionally so every agent consumes the same number of variates
    const double u_change = uniform(rng, 0.0, 1.0);
    const double u_pick = uniform(rng, 0.0, 1.0);
    const double jitter = uniform(rng, -opts.speed_jitter, opts.speed_jitter);
    params[i].v0 = std::max(3.0, a.speed + jitter);
    params[i].T_h = 1.5;
    const auto m = scene.map.associate(a.position, a.heading);
    if (!m) continue;
    lane[i] = m->lane_index;
    if (u_change < opts.lane_change_prob) {
      std::vector<std::size_t> options;
      const double lane_heading = scene.map.lane(m->lane_index).heading_at(m->projection.s);
      for (std::size_t j : scene.map.adjacent_lanes(m->lane_index)) {
        if (j == m->lane_index) continue;
        const double s = scene.map.lane(j).project(a.position).s;
        if (std::abs(normalize_angle(scene.map.lane(j).heading_at(s) - lane_heading)) < 0.5) options.push_back(j);
      }
      if (!options.empty()) {
        lane[i] = options[std::min(options.size() - 1, static_cast<std::size_t>(u_pick * options.size()))];
      }
    }
  }
  JointTrajectory out(N, H);
  std::vector<AgentState> others;
  for (std::size_t h = 0; h < H; ++h) {
    std::vector<AgentState> next = cur;
    for (std::size_t i = 0; i < N; ++i) {
      double accel = 0.0;
      double steer = 0.0;
      if (lane[i]) {
        lane[i] = advance_lane(scene.map, *lane[i], cur[i].position);
        others.clear();
        for (std::size_t j = 0; j < N; ++j) {
          if (j != i) others.push_back(cur[j]);
        }
        const Leader lead = find_leader(cur[i], *lane[i], scene.map, others);
        accel = idm_accel(cur[i].speed, lead.gap, lead.dv, params[i], cfg.b_max);
        steer = pure_pursuit(cur[i], *lane[i], scene.map, std::max(8.0, 1.2 * cur[i].speed), 1.0, cfg.max_steer);
      }
      step_bicycle(next[i], accel, steer, dt);
      out.at(i, h) = next[i].position;
    }
    cur = std::move(next);
  }
  return out;
}

}  // namespace scenforge
