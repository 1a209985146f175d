#pragma once

#include "scenforge/random.hpp"
#include "scenforge/world.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace scenforge {

/// Variance-preserving schedule on diffusion indices k = 0..K with unit
/// diffusion time (T = 1, dt = 1/K). beta is linear over the K + 1 indices and
/// gamma_bar_k = prod_{j<=k} (1 - beta_j). The continuous-time coefficients
/// are f(x, k) = -K beta_k x / 2 and g(k)^2 = K beta_k, so g^2 |dt| = beta_k.
class VpSchedule {
 public:
  VpSchedule(int steps, double beta_min, double beta_max);
  /// Default range 1e-4..0.02 rescaled by 1000/K, so the terminal index is
  /// close to pure noise for any K. Betas are capped at 0.5 for K < 40.
  static VpSchedule with_default_range(int steps);

  int steps() const { return steps_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }
  double beta(int k) const { return beta_.at(static_cast<std::size_t>(k)); }
  double gamma_bar(int k) const { return gamma_bar_.at(static_cast<std::size_t>(k)); }
  double g2(int k) const { return steps_ * beta(k); }
  double drift_coeff(int k) const { return -0.5 * steps_ * beta(k); }
  double dt() const { return 1.0 / steps_; }

 private:
  int steps_;
  double beta_min_;
  double beta_max_;
  std::vector<double> beta_;
  std::vector<double> gamma_bar_;
};

struct GmmComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // diagonal covariance
};

/// Diagonal Gaussian mixture over one agent's latent block. Noising by the VP
/// kernel keeps every component Gaussian: mean sqrt(gb) mu, var gb s + 1 - gb.
class TrajectoryGmm {
 public:
  TrajectoryGmm() = default;
  explicit TrajectoryGmm(std::vector<GmmComponent> components);

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<GmmComponent>& components() const { return components_; }

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x, double gamma_bar) const;
  void score(const Eigen::Ref<const Eigen::VectorXd>& x, double gamma_bar,
             Eigen::Ref<Eigen::VectorXd> out) const;
  /// Hessian of the log density times v.
  void hessian_vector(const Eigen::Ref<const Eigen::VectorXd>& x, double gamma_bar,
                      const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Ref<Eigen::VectorXd> out) const;

  Eigen::VectorXd mixture_mean() const;
  Eigen::VectorXd mixture_variance() const;
  Eigen::VectorXd sample(Rng& rng) const;

 private:
  // Per-component log-joint terms and component scores at noise level gb.
  void responsibilities(const Eigen::Ref<const Eigen::VectorXd>& x, double gamma_bar,
                        Eigen::VectorXd& resp, double* log_norm) const;

  Eigen::Index dim_ = 0;
  std::vector<GmmComponent> components_;
};

struct GmmFitReport {
  int iterations = 0;
  std::vector<double> log_likelihood;  // mean per-sample log-likelihood after each iteration
  std::size_t clamped_variances = 0;   // variance entries raised to the 1e-8 floor
  bool converged = false;
};

struct GmmFit {
  TrajectoryGmm gmm;
  GmmFitReport report;
};

struct EmOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;
  double variance_floor = 1e-8;
  std::uint64_t seed = 7;
};

/// EM fit of a diagonal mixture; rows of `samples` are observations.
/// Requires at least 10 * components rows. Initialized by k-means++.
GmmFit fit_prior(const Eigen::MatrixXd& samples, int components, const EmOptions& options = {});

// --- latent-vector operations (N agent blocks of gmm.dim() each) -----------

double log_density(const Eigen::VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched);
Eigen::VectorXd score(const Eigen::VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched);
Eigen::VectorXd forward_project(const Eigen::VectorXd& x0, int k, const Eigen::VectorXd& eps,
                                const VpSchedule& sched);
/// Tweedie estimate (x + (1 - gb) score) / sqrt(gb); rejects gb <= 1e-6.
Eigen::VectorXd denoised_prediction(const Eigen::VectorXd& x, int k, const TrajectoryGmm& gmm,
                                    const VpSchedule& sched);
/// Pulls a gradient w.r.t. the denoised prediction back to x. With
/// exact_jacobian the Tweedie Jacobian (I + (1 - gb) Hess log p) / sqrt(gb) is
/// applied; otherwise the straight-through identity.
Eigen::VectorXd denoised_vjp(const Eigen::VectorXd& x, int k, const TrajectoryGmm& gmm,
                             const VpSchedule& sched, const Eigen::VectorXd& upstream, bool exact_jacobian);

// --- trajectory codec -------------------------------------------------------

/// Linear map between an agent latent block z and its residual r in the
/// agent's initial frame: r = basis * (scale .* z). The residual is the
/// displacement (longitudinal, lateral) per step minus constant-velocity travel.
struct LatentCodec {
  Eigen::MatrixXd basis;  // orthonormal columns
  Eigen::VectorXd scale;

  static LatentCodec identity(Eigen::Index dim, double scale = 1.0);
  /// Principal axes of `residuals` (rows), scales floored at min_scale.
  static LatentCodec fit_pca(const Eigen::MatrixXd& residuals, double min_scale = 0.02);

  Eigen::Index dim() const { return scale.size(); }
  Eigen::VectorXd decode(const Eigen::VectorXd& z) const { return basis * scale.cwiseProduct(z); }
  Eigen::VectorXd encode(const Eigen::VectorXd& r) const {
    return (basis.transpose() * r).cwiseQuotient(scale);
  }
  Eigen::VectorXd pullback(const Eigen::VectorXd& grad_r) const {
    return scale.cwiseProduct(basis.transpose() * grad_r);
  }
};

/// Residual vector of one agent: 2H entries (longitudinal, lateral) per step.
Eigen::VectorXd agent_residual(const AgentState& initial, std::span<const Vec2> positions, double dt);

JointTrajectory decode_latent(const Eigen::VectorXd& latent, const Scene& scene, const LatentCodec& codec);
Eigen::VectorXd encode_trajectory(const JointTrajectory& traj, const Scene& scene, const LatentCodec& codec);
/// d(loss)/d(latent) given d(loss)/d(world positions) stored as an N x H grid.
Eigen::VectorXd pullback_gradient(const JointTrajectory& grad_world, const Scene& scene,
                                  const LatentCodec& codec);

struct TrajectoryPrior {
  TrajectoryGmm gmm;
  LatentCodec codec;
  VpSchedule schedule = VpSchedule::with_default_range(100);
  int horizon = 0;
};

struct PriorFitOptions {
  int components = 8;
  int diffusion_steps = 100;
  double min_scale = 0.02;
  EmOptions em;
};

/// Fits codec and mixture on per-agent residuals of lane-following rollouts.
/// trajectories[i] belongs to scenes[i]; all must share the horizon.
std::pair<TrajectoryPrior, GmmFitReport> fit_trajectory_prior(std::span<const Scene> scenes,
                                                              std::span<const JointTrajectory> trajectories,
                                                              const PriorFitOptions& options = {});

nlohmann::json prior_to_json(const TrajectoryPrior& prior);
TrajectoryPrior prior_from_json(const nlohmann::json& doc);

}  // namespace scenforge
