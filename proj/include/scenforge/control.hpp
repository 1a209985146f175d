#pragma once

#include "scenforge/prior.hpp"
#include "scenforge/random.hpp"
#include "scenforge/targeting.hpp"
#include "scenforge/world.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace scenforge {

struct FeasibilityWeights {
  double offroad = 1.0;
  double speed = 1.0;
  double accel = 0.1;
  double v_max = 20.0;  // m/s
  double a_max = 4.0;   // m/s^2
};

struct GuidanceConfig {
  double eta = 0.0;
  double alpha = 0.5;
  double anchor_frac = 0.3;  // k_a = round(anchor_frac * K)
  bool anchoring = true;
  FeasibilityWeights feas;
  double w_adv = 0.02;      // scales V_adv before eta
  double d_goal = 2.0;      // m
  double temperature = 1.0; // m, soft-min over steps
  double clip = 5.0;        // max norm of the combined potential gradient per step
  bool exact_jacobian = true;

  int anchor_index(int steps) const;
};

/// Throws on eta < 0, alpha outside (0, 1], negative weights or an anchor
/// index outside (0, K) while anchoring is enabled.
void validate(const GuidanceConfig& cfg, int steps);

struct Potential {
  double value = 0.0;
  JointTrajectory grad;  // d value / d position, N x H
};

/// Hinge-squared penalties on offroad distance, speed above v_max and
/// acceleration magnitude above a_max. Speeds and accelerations use finite
/// differences anchored at each agent's initial position and velocity.
Potential v_feas_world(const JointTrajectory& pos, const Scene& scene, const FeasibilityWeights& w);

/// Sum over chain edges (a -> b) of max(0, softmin_h |p_a(h) - p_b(h)| - d_goal)^2.
/// The soft-min is the exp(-d / T)-weighted mean of the per-step distances.
/// Edges ending at the ego use ego_ref (fixed) instead of the ego's block.
Potential v_adv_world(const JointTrajectory& pos, const Skeleton& skel, const Scene& scene,
                      std::span<const Vec2> ego_ref, double d_goal, double temperature);

/// Latent-level potentials: decode, evaluate, pull the gradient back through the codec.
double v_feas(const Eigen::VectorXd& x0_hat, const Scene& scene, const LatentCodec& codec,
              const FeasibilityWeights& w, Eigen::VectorXd* grad = nullptr);
double v_adv(const Eigen::VectorXd& x0_hat, const Skeleton& skel, const Scene& scene, const LatentCodec& codec,
             std::span<const Vec2> ego_ref, double d_goal, double temperature, Eigen::VectorXd* grad = nullptr);

struct KlStep {
  int k = 0;
  double u_norm = 0.0;
  double kl_inc = 0.0;
};

/// Running sum of 0.5 |u / g|^2 |dt| over reverse steps, in nats.
struct KlLedger {
  double total = 0.0;
  std::vector<KlStep> steps;

  double add(int k, const Eigen::VectorXd& u, double g2, double dt_abs);
};

/// Everything the guidance needs besides the latent itself.
struct GuidanceInputs {
  const Scene* scene = nullptr;
  const TrajectoryPrior* prior = nullptr;
  const Skeleton* skel = nullptr;             // null: no adversarial term
  std::vector<Vec2> ego_ref;                  // ego reference path, H positions
  const Eigen::VectorXd* anchor_clean = nullptr;  // x~_0 latent, null: no anchoring
};

struct GuidanceTerms {
  Eigen::VectorXd feas;  // grad_x V_feas(x0_hat)
  Eigen::VectorXd adv;   // M_S grad_x (w_adv V_adv)(x0_hat)
};

/// Gradients of both potentials w.r.t. x_k through the denoised prediction.
GuidanceTerms guidance_terms(const Eigen::VectorXd& x, int k, const GuidanceInputs& in, const GuidanceConfig& cfg);

struct Drift {
  Eigen::VectorXd u;
  bool nonfinite = false;  // gradient was not finite, u zeroed
  bool clipped = false;
};

/// u = -g^2 clip(grad V_feas + eta M_S grad V_adv).
Drift guided_drift(const Eigen::VectorXd& x, int k, const GuidanceInputs& in, const GuidanceConfig& cfg);

/// Euler-Maruyama step k -> k-1 with the prior score and control u. The
/// control enters along the reverse-time direction, x += u |dt|, so that
/// u = -g^2 grad V decreases V.
Eigen::VectorXd reverse_step(const Eigen::VectorXd& x, int k, const Eigen::VectorXd& u, const TrajectoryGmm& gmm,
                             const VpSchedule& sched, const Eigen::VectorXd& xi);
Eigen::VectorXd reverse_step(const Eigen::VectorXd& x, int k, const Eigen::VectorXd& u, const TrajectoryGmm& gmm,
                             const VpSchedule& sched, Rng& rng);

/// (1 - alpha) x + alpha (sqrt(gb) x~_0 + sqrt(1 - gb) eps).
Eigen::VectorXd anchor_inject(const Eigen::VectorXd& x, const Eigen::VectorXd& x_tilde0, double alpha, int k_a,
                              const VpSchedule& sched, const Eigen::VectorXd& eps);

using ControlFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, int k)>;

/// Integrates from k = K down to 0 starting at x_T with an arbitrary control
/// (null: uncontrolled). Noise is drawn from `rng`, one full vector per step.
Eigen::VectorXd integrate_reverse(Eigen::VectorXd x, const TrajectoryGmm& gmm, const VpSchedule& sched, Rng& rng,
                                  const ControlFn& control = {}, KlLedger* ledger = nullptr);

struct Synthesis {
  std::uint64_t seed = 0;
  Eigen::VectorXd latent;
  JointTrajectory traj;
  KlLedger ledger;
  bool anchor_applied = false;
  int anchor_index = 0;
  int nonfinite_steps = 0;
  int clipped_steps = 0;
};

/// Full controlled reverse pass. Initial noise and per-step noise come from
/// Rng(seed); the anchor noise from an independent stream derived from seed.
Synthesis synthesize(const GuidanceInputs& in, const GuidanceConfig& cfg, std::uint64_t seed);

nlohmann::json synthesis_to_json(const Synthesis& s, const GuidanceConfig& cfg);

}  // namespace scenforge
