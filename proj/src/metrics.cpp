#include "scenforge/metrics.hpp"

#include "scenforge/riskgraph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace scenforge {

double episode_min_dtc(const Rollout& r) {
  if (r.collided) return 0.0;
  double best = 1e300;
  for (const auto& f : r.frames) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i != r.ego_index) best = std::min(best, box_distance(f[r.ego_index], f[i]));
    }
  }
  return best;
}

double episode_ttc_cost(const Rollout& r, double ttc_crit) {
  if (r.frames.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& f : r.frames) {
    double min_ttc = ttc_crit;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i != r.ego_index) min_ttc = std::min(min_ttc, ttc_surrogate(f[r.ego_index], f[i], ttc_crit));
    }
    sum += std::max(0.0, (ttc_crit - min_ttc) / ttc_crit);
  }
  return sum / static_cast<double>(r.frames.size());
}

double episode_mean_abs_accel(const Rollout& r) {
  if (r.actions.empty()) return 0.0;
  double s = 0.0;
  for (const EgoAction& a : r.actions) s += std::abs(a.accel);
  return s / static_cast<double>(r.actions.size());
}

bool episode_offroad(const Rollout& r, const MetricsParams& p) {
  // agent -> sorted steps with an offroad event above the margin
  std::map<int, std::vector<int>> steps;
  for (const SimEvent& ev : r.events) {
    if (ev.kind != EventKind::offroad || ev.value <= p.offroad_margin) continue;
    for (int id : ev.participants) steps[id].push_back(ev.step);
  }
  for (auto& [id, s] : steps) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    int run = 1;
    if (p.offroad_debounce <= 1 && !s.empty()) return true;
    for (std::size_t k = 1; k < s.size(); ++k) {
      run = s[k] == s[k - 1] + 1 ? run + 1 : 1;
      if (run >= p.offroad_debounce) return true;
    }
  }
  return false;
}

MetricsReport safety_metrics(std::span<const Rollout> batch, const MetricsParams& p) {
  if (batch.empty()) throw Error("safety_metrics: empty batch");
  MetricsReport m;
  m.episodes = batch.size();
  const double n = static_cast<double>(batch.size());
  std::size_t collided = 0, front = 0, side = 0, rear = 0;
  double rel = 0.0;
  for (const Rollout& r : batch) {
    m.min_dtc += episode_min_dtc(r) / n;
    m.ttc_cost += episode_ttc_cost(r, p.ttc_crit) / n;
    m.m_acc += episode_mean_abs_accel(r) / n;
    if (!r.collided) continue;
    ++collided;
    rel += r.rel_vel;
    front += r.impact == ImpactClass::front;
    side += r.impact == ImpactClass::side;
    rear += r.impact == ImpactClass::rear;
  }
  m.cfr = static_cast<double>(collided) / n;
  m.front = static_cast<double>(front) / n;
  m.side = static_cast<double>(side) / n;
  m.rir = static_cast<double>(rear) / n;
  if (collided > 0) m.rel_vel = rel / static_cast<double>(collided);
  return m;
}

double validity_metrics(std::span<const Rollout> batch, const MetricsParams& p) {
  if (batch.empty()) throw Error("validity_metrics: empty batch");
  std::size_t bad = 0;
  for (const Rollout& r : batch) bad += episode_offroad(r, p) ? 1 : 0;
  return static_cast<double>(bad) / static_cast<double>(batch.size());
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // integral of |F_a - F_b| over the merged support
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
    prev = x;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return total;
}

double iqr_scale(std::vector<double> v) {
  if (v.empty()) throw Error("iqr_scale: empty sample");
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return std::max(1e-3, q(0.75) - q(0.25));
}

void KinematicSamples::append(const KinematicSamples& o) {
  speed.insert(speed.end(), o.speed.begin(), o.speed.end());
  accel.insert(accel.end(), o.accel.begin(), o.accel.end());
  lat_accel.insert(lat_accel.end(), o.lat_accel.begin(), o.lat_accel.end());
}

KinematicSamples kinematic_samples(const JointTrajectory& traj, double dt, std::span<const double> initial_headings) {
  KinematicSamples out;
  if (traj.steps() < 3) return out;
  for (const AgentKinematics& k : derive_kinematics(traj, dt, initial_headings)) {
    out.speed.insert(out.speed.end(), k.speed.begin(), k.speed.end());
    out.accel.insert(out.accel.end(), k.accel.begin(), k.accel.end());
    out.lat_accel.insert(out.lat_accel.end(), k.lat_accel.begin(), k.lat_accel.end());
  }
  return out;
}

KinematicSamples kinematic_samples(const Rollout& r) {
  if (r.frames.size() < 4) return {};
  const std::size_t steps = r.frames.size() - 1;
  const JointTrajectory pos = rollout_positions(r, steps);
  std::vector<double> headings;
  for (const AgentState& a : r.frames.front()) headings.push_back(a.heading);
  return kinematic_samples(pos, r.dt, headings);
}

double realism_score(const KinematicSamples& sim, const KinematicSamples& ref) {
  const std::vector<double>* s[3] = {&sim.speed, &sim.accel, &sim.lat_accel};
  const std::vector<double>* r[3] = {&ref.speed, &ref.accel, &ref.lat_accel};
  double mean = 0.0;
  for (int k = 0; k < 3; ++k) mean += wasserstein1(*s[k], *r[k]) / iqr_scale(*r[k]) / 3.0;
  return std::exp(-mean);
}

MetricsReport evaluate(std::span<const Rollout> batch, const KinematicSamples* reference, const MetricsParams& p) {
  MetricsReport m = safety_metrics(batch, p);
  m.aor = validity_metrics(batch, p);
  if (reference) {
    KinematicSamples sim;
    for (const Rollout& r : batch) sim.append(kinematic_samples(r));
    if (!sim.speed.empty() && !reference->speed.empty()) m.real = realism_score(sim, *reference);
  }
  return m;
}

nlohmann::json report_to_json(const MetricsReport& m) {
  nlohmann::json d{{"episodes", m.episodes}, {"CFR", m.cfr},     {"MinDTC", m.min_dtc}, {"RIR", m.rir},
                   {"Front", m.front},       {"Side", m.side},   {"TTC-C", m.ttc_cost}, {"mAcc", m.m_acc},
                   {"AOR", m.aor}};
  d["RelVel"] = m.rel_vel ? nlohmann::json(*m.rel_vel) : nlohmann::json(nullptr);
  d["REAL"] = m.real ? nlohmann::json(*m.real) : nlohmann::json(nullptr);
  return d;
}

std::string report_csv_header() { return "episodes,CFR,MinDTC,RelVel,RIR,Front,Side,TTC-C,mAcc,AOR,REAL"; }

std::string report_csv_row(const MetricsReport& m) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << m.episodes << ',' << m.cfr << ',' << m.min_dtc << ',';
  if (m.rel_vel) os << *m.rel_vel;
  os << ',' << m.rir << ',' << m.front << ',' << m.side << ',' << m.ttc_cost << ',' << m.m_acc << ',' << m.aor << ',';
  if (m.real) os << *m.real;
  return os.str();
}

}  // namespace scenforge
