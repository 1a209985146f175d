#include "scenforge/control.hpp"

#include <algorithm>
#include <cmath>

namespace scenforge {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kEps2 = 1e-12;  // smoothing for norms at zero

double smooth_norm(const Vec2& v) { return std::sqrt(v.squaredNorm() + kEps2); }

JointTrajectory zeros_like(std::size_t n, std::size_t h) {
  JointTrajectory g(n, h);
  for (std::size_t i = 0; i < n; ++i) {
    for (Vec2& p : g.agent(i)) p.setZero();
  }
  return g;
}

}  // namespace

int GuidanceConfig::anchor_index(int steps) const {
  return static_cast<int>(std::lround(anchor_frac * steps));
}

void validate(const GuidanceConfig& cfg, int steps) {
  if (!(cfg.eta >= 0.0)) throw Error("guidance: eta must be >= 0");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw Error("guidance: alpha must lie in (0, 1]");
  const auto& w = cfg.feas;
  if (w.offroad < 0 || w.speed < 0 || w.accel < 0 || cfg.w_adv < 0 || cfg.d_goal < 0) {
    throw Error("guidance: weights must be >= 0");
  }
  if (!(w.v_max > 0 && w.a_max > 0 && cfg.temperature > 0 && cfg.clip > 0)) {
    throw Error("guidance: limits, temperature and clip must be positive");
  }
  if (cfg.anchoring) {
    const int ka = cfg.anchor_index(steps);
    if (ka <= 0 || ka >= steps) throw Error("guidance: anchor index must lie in (0, K)");
  }
}

Potential v_feas_world(const JointTrajectory& pos, const Scene& scene, const FeasibilityWeights& w) {
  const std::size_t N = pos.agents();
  const std::size_t H = pos.steps();
  const double dt = scene.dt_phys;
  Potential out{0.0, zeros_like(N, H)};
  for (std::size_t i = 0; i < N; ++i) {
    const AgentState& a = scene.agents[i];
    const Vec2 p_m1 = a.position;
    const Vec2 p_m2 = a.position - a.velocity() * dt;
    auto P = [&](long h) -> Vec2 {
      if (h >= 0) return pos.at(i, static_cast<std::size_t>(h));
      return h == -1 ? p_m1 : p_m2;
    };
    auto add_grad = [&](long h, const Vec2& g) {
      if (h >= 0) out.grad.at(i, static_cast<std::size_t>(h)) += g;
    };
    for (long h = 0; h < static_cast<long>(H); ++h) {
      const Vec2 p = P(h);
      if (w.offroad > 0.0) {
        const double d = scene.map.signed_offroad_distance(p);
        if (d > 0.0) {
          out.value += w.offroad * d * d;
          add_grad(h, 2.0 * w.offroad * d * scene.map.offroad_gradient(p));
        }
      }
      if (w.speed > 0.0) {
        const Vec2 delta = p - P(h - 1);
        const double n = smooth_norm(delta);
        const double sp = n / dt;
        if (sp > w.v_max) {
          const double e = sp - w.v_max;
          out.value += w.speed * e * e;
          const Vec2 g = 2.0 * w.speed * e * delta / (n * dt);
          add_grad(h, g);
          add_grad(h - 1, -g);
        }
      }
      if (w.accel > 0.0) {
        const Vec2 acc = (p - 2.0 * P(h - 1) + P(h - 2)) / (dt * dt);
        const double n = smooth_norm(acc);
        if (n > w.a_max) {
          const double e = n - w.a_max;
          out.value += w.accel * e * e;
          const Vec2 g = 2.0 * w.accel * e * acc / (n * dt * dt);
          add_grad(h, g);
          add_grad(h - 1, -2.0 * g);
          add_grad(h - 2, g);
        }
      }
    }
  }
  return out;
}

Potential v_adv_world(const JointTrajectory& pos, const Skeleton& skel, const Scene& scene,
                      std::span<const Vec2> ego_ref, double d_goal, double temperature) {
  const std::size_t N = pos.agents();
  const std::size_t H = pos.steps();
  Potential out{0.0, zeros_like(N, H)};
  std::vector<double> d(H), wgt(H);
  std::vector<Vec2> diff(H);
  for (const ChainEdge& e : skel.chain) {
    const std::size_t a = scene.require_index(e.from);
    const std::size_t b = scene.require_index(e.to);
    const bool to_ego = e.to == skel.ego_id;
    if (to_ego && ego_ref.size() != H) throw Error("v_adv: ego reference must cover the horizon");
    double dmin = 1e300;
    for (std::size_t h = 0; h < H; ++h) {
      const Vec2 pb = to_ego ? ego_ref[h] : pos.at(b, h);
      diff[h] = pos.at(a, h) - pb;
      d[h] = smooth_norm(diff[h]);
      dmin = std::min(dmin, d[h]);
    }
    double z = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      wgt[h] = std::exp(-(d[h] - dmin) / temperature);
      z += wgt[h];
    }
    double soft = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      wgt[h] /= z;
      soft += wgt[h] * d[h];
    }
    const double gap = soft - d_goal;
    if (gap <= 0.0) continue;
    out.value += gap * gap;
    for (std::size_t h = 0; h < H; ++h) {
      const double ds_dd = wgt[h] * (1.0 - (d[h] - soft) / temperature);
      const Vec2 g = 2.0 * gap * ds_dd * diff[h] / d[h];
      out.grad.at(a, h) += g;
      if (!to_ego) out.grad.at(b, h) -= g;
    }
  }
  return out;
}

double v_feas(const VectorXd& x0_hat, const Scene& scene, const LatentCodec& codec, const FeasibilityWeights& w,
              VectorXd* grad) {
  const JointTrajectory pos = decode_latent(x0_hat, scene, codec);
  Potential p = v_feas_world(pos, scene, w);
  if (grad) *grad = pullback_gradient(p.grad, scene, codec);
  return p.value;
}

double v_adv(const VectorXd& x0_hat, const Skeleton& skel, const Scene& scene, const LatentCodec& codec,
             std::span<const Vec2> ego_ref, double d_goal, double temperature, VectorXd* grad) {
  const JointTrajectory pos = decode_latent(x0_hat, scene, codec);
  Potential p = v_adv_world(pos, skel, scene, ego_ref, d_goal, temperature);
  if (grad) *grad = pullback_gradient(p.grad, scene, codec);
  return p.value;
}

double KlLedger::add(int k, const VectorXd& u, double g2, double dt_abs) {
  const double inc = u.squaredNorm() == 0.0 ? 0.0 : 0.5 * u.squaredNorm() / g2 * dt_abs;
  total += inc;
  steps.push_back({k, u.norm(), inc});
  return inc;
}

GuidanceTerms guidance_terms(const VectorXd& x, int k, const GuidanceInputs& in, const GuidanceConfig& cfg) {
  const TrajectoryPrior& prior = *in.prior;
  const Scene& scene = *in.scene;
  const VectorXd x0 = denoised_prediction(x, k, prior.gmm, prior.schedule);
  VectorXd g_feas;
  v_feas(x0, scene, prior.codec, cfg.feas, &g_feas);
  GuidanceTerms t;
  t.feas = denoised_vjp(x, k, prior.gmm, prior.schedule, g_feas, cfg.exact_jacobian);
  if (in.skel && cfg.w_adv > 0.0 && !in.skel->chain.empty()) {
    VectorXd g_adv;
    v_adv(x0, *in.skel, scene, prior.codec, in.ego_ref, cfg.d_goal, cfg.temperature, &g_adv);
    g_adv *= cfg.w_adv;
    const Index D = prior.gmm.dim();
    // mask before the Jacobian: it is block diagonal, so the order does not matter
    t.adv = denoised_vjp(x, k, prior.gmm, prior.schedule, apply_mask(*in.skel, g_adv, D), cfg.exact_jacobian);
    t.adv = apply_mask(*in.skel, t.adv, D);
  } else {
    t.adv = VectorXd::Zero(x.size());
  }
  return t;
}

Drift guided_drift(const VectorXd& x, int k, const GuidanceInputs& in, const GuidanceConfig& cfg) {
  const VpSchedule& sched = in.prior->schedule;
  if (sched.gamma_bar(k) <= 1e-6) throw Error("guided_drift: gamma_bar too small");
  const GuidanceTerms t = guidance_terms(x, k, in, cfg);
  VectorXd g = t.feas;
  if (cfg.eta > 0.0) g += cfg.eta * t.adv;
  Drift d;
  if (!g.allFinite()) {
    d.u = VectorXd::Zero(x.size());
    d.nonfinite = true;
    return d;
  }
  const double n = g.norm();
  if (n > cfg.clip) {
    g *= cfg.clip / n;
    d.clipped = true;
  }
  d.u = -sched.g2(k) * g;
  return d;
}

VectorXd reverse_step(const VectorXd& x, int k, const VectorXd& u, const TrajectoryGmm& gmm,
                      const VpSchedule& sched, const VectorXd& xi) {
  if (k < 1 || k > sched.steps()) throw Error("reverse_step: k must lie in [1, K]");
  const double dt_abs = sched.dt();
  const double g2 = sched.g2(k);
  const VectorXd s = score(x, k, gmm, sched);
  // (f - g^2 s) dt with dt = -|dt|
  VectorXd next = x - (sched.drift_coeff(k) * x - g2 * s) * dt_abs;
  if (u.size() == x.size()) next += u * dt_abs;
  next += std::sqrt(g2 * dt_abs) * xi;
  return next;
}

VectorXd reverse_step(const VectorXd& x, int k, const VectorXd& u, const TrajectoryGmm& gmm,
                      const VpSchedule& sched, Rng& rng) {
  return reverse_step(x, k, u, gmm, sched, normal_vector(rng, x.size()));
}

VectorXd anchor_inject(const VectorXd& x, const VectorXd& x_tilde0, double alpha, int k_a, const VpSchedule& sched,
                       const VectorXd& eps) {
  if (k_a <= 0 || k_a >= sched.steps()) throw Error("anchor_inject: anchor index must lie in (0, K)");
  if (x.size() != x_tilde0.size()) throw Error("anchor_inject: size mismatch");
  if (alpha == 0.0) return x;
  return (1.0 - alpha) * x + alpha * forward_project(x_tilde0, k_a, eps, sched);
}

VectorXd integrate_reverse(VectorXd x, const TrajectoryGmm& gmm, const VpSchedule& sched, Rng& rng,
                           const ControlFn& control, KlLedger* ledger) {
  VectorXd xi(x.size());
  for (int k = sched.steps(); k >= 1; --k) {
    VectorXd u;
    if (control) {
      u = control(x, k);
      if (ledger) ledger->add(k, u, sched.g2(k), sched.dt());
    }
    fill_normal(rng, xi);
    x = reverse_step(x, k, u, gmm, sched, xi);
  }
  return x;
}

Synthesis synthesize(const GuidanceInputs& in, const GuidanceConfig& cfg, std::uint64_t seed) {
  if (!in.scene || !in.prior) throw Error("synthesize: scene and prior are required");
  const Scene& scene = *in.scene;
  const TrajectoryPrior& prior = *in.prior;
  const VpSchedule& sched = prior.schedule;
  const int K = sched.steps();
  const bool anchoring = cfg.anchoring && in.anchor_clean != nullptr;
  if (anchoring) validate(cfg, K);
  else {
    GuidanceConfig c = cfg;
    c.anchoring = false;
    validate(c, K);
  }
  const Index n = prior.gmm.dim() * static_cast<Index>(scene.num_agents());
  if (prior.gmm.dim() != 2 * scene.horizon_steps) throw Error("synthesize: prior horizon does not match scene");

  Synthesis out;
  out.seed = seed;
  out.anchor_index = anchoring ? cfg.anchor_index(K) : 0;
  Rng rng(seed);
  Rng anchor_rng(mix_seed(seed, 0xa11c0ULL));
  VectorXd x = normal_vector(rng, n);
  VectorXd xi(n);
  for (int k = K; k >= 1; --k) {
    if (anchoring && k == out.anchor_index) {
      x = anchor_inject(x, *in.anchor_clean, cfg.alpha, k, sched, normal_vector(anchor_rng, n));
      out.anchor_applied = true;
    }
    const Drift d = guided_drift(x, k, in, cfg);
    out.nonfinite_steps += d.nonfinite ? 1 : 0;
    out.clipped_steps += d.clipped ? 1 : 0;
    out.ledger.add(k, d.u, sched.g2(k), sched.dt());
    fill_normal(rng, xi);
    x = reverse_step(x, k, d.u, prior.gmm, sched, xi);
  }
  out.latent = x;
  out.traj = decode_latent(x, scene, prior.codec);
  return out;
}

nlohmann::json synthesis_to_json(const Synthesis& s, const GuidanceConfig& cfg) {
  nlohmann::json doc;
  doc["seed"] = s.seed;
  doc["eta"] = cfg.eta;
  doc["alpha"] = cfg.alpha;
  doc["k_a"] = s.anchor_index;
  doc["kl_total"] = s.ledger.total;
  doc["anchor_applied"] = s.anchor_applied;
  doc["nonfinite_steps"] = s.nonfinite_steps;
  nlohmann::json steps = nlohmann::json::array();
  for (const KlStep& st : s.ledger.steps) steps.push_back({{"k", st.k}, {"u_norm", st.u_norm}, {"kl_inc", st.kl_inc}});
  doc["per_step"] = steps;
  return doc;
}

}  // namespace scenforge
