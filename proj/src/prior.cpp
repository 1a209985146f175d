#include "scenforge/prior.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace scenforge {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check_blocks(const VectorXd& x, const TrajectoryGmm& gmm) {
  if (gmm.dim() == 0 || x.size() % gmm.dim() != 0) {
    throw Error("latent size is not a multiple of the prior block dimension");
  }
}

void check_index(int k, const VpSchedule& sched) {
  if (k < 0 || k > sched.steps()) throw Error("diffusion index out of range");
}

}  // namespace

// ---------------------------------------------------------------------------
// VpSchedule

VpSchedule::VpSchedule(int steps, double beta_min, double beta_max)
    : steps_(steps), beta_min_(beta_min), beta_max_(beta_max) {
  if (steps < 2) throw Error("schedule: need K >= 2");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_max < beta_min) {
    throw Error("schedule: betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  beta_.resize(static_cast<std::size_t>(steps) + 1);
  gamma_bar_.resize(beta_.size());
  double prod = 1.0;
  for (int k = 0; k <= steps; ++k) {
    const double b = beta_min + (beta_max - beta_min) * static_cast<double>(k) / steps;
    beta_[static_cast<std::size_t>(k)] = b;
    prod *= 1.0 - b;
    gamma_bar_[static_cast<std::size_t>(k)] = prod;
  }
}

VpSchedule VpSchedule::with_default_range(int steps) {
  if (steps < 2) throw Error("schedule: need K >= 2");
  const double factor = 1000.0 / steps;
  return VpSchedule(steps, std::min(1e-4 * factor, 0.5), std::min(0.02 * factor, 0.5));
}

// ---------------------------------------------------------------------------
// TrajectoryGmm

TrajectoryGmm::TrajectoryGmm(std::vector<GmmComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw Error("gmm: need at least one component");
  dim_ = components_.front().mean.size();
  double total = 0.0;
  for (const GmmComponent& c : components_) {
    if (c.mean.size() != dim_ || c.var.size() != dim_) throw Error("gmm: inconsistent component dimension");
    if (!(c.weight >= 0.0)) throw Error("gmm: negative weight");
    if (!((c.var.array() > 0.0).all())) throw Error("gmm: variances must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("gmm: weights must sum to 1");
}

void TrajectoryGmm::responsibilities(const Eigen::Ref<const VectorXd>& x, double gb, VectorXd& resp,
                                     double* log_norm) const {
  const std::size_t M = components_.size();
  resp.resize(static_cast<Index>(M));
  const double sg = std::sqrt(gb);
  for (std::size_t m = 0; m < M; ++m) {
    const GmmComponent& c = components_[m];
    double acc = std::log(c.weight);
    for (Index d = 0; d < dim_; ++d) {
      const double v = gb * c.var[d] + (1.0 - gb);
      const double r = x[d] - sg * c.mean[d];
      acc -= 0.5 * (kLog2Pi + std::log(v) + r * r / v);
    }
    resp[static_cast<Index>(m)] = acc;
  }
  const double lse = log_sum_exp(resp);
  if (log_norm) *log_norm = lse;
  resp = (resp.array() - lse).exp();
}

double TrajectoryGmm::log_density(const Eigen::Ref<const VectorXd>& x, double gb) const {
  VectorXd resp;
  double lse = 0.0;
  responsibilities(x, gb, resp, &lse);
  return lse;
}

void TrajectoryGmm::score(const Eigen::Ref<const VectorXd>& x, double gb, Eigen::Ref<VectorXd> out) const {
  VectorXd resp;
  responsibilities(x, gb, resp, nullptr);
  out.setZero();
  const double sg = std::sqrt(gb);
  for (std::size_t m = 0; m < components_.size(); ++m) {
    const double r = resp[static_cast<Index>(m)];
    if (r == 0.0) continue;
    const GmmComponent& c = components_[m];
    for (Index d = 0; d < dim_; ++d) {
      const double v = gb * c.var[d] + (1.0 - gb);
      out[d] -= r * (x[d] - sg * c.mean[d]) / v;
    }
  }
}

void TrajectoryGmm::hessian_vector(const Eigen::Ref<const VectorXd>& x, double gb,
                                   const Eigen::Ref<const VectorXd>& v, Eigen::Ref<VectorXd> out) const {
  VectorXd resp;
  responsibilities(x, gb, resp, nullptr);
  const double sg = std::sqrt(gb);
  VectorXd s = VectorXd::Zero(dim_);
  VectorXd gm(dim_);
  out.setZero();
  for (std::size_t m = 0; m < components_.size(); ++m) {
    const double r = resp[static_cast<Index>(m)];
    if (r == 0.0) continue;
    const GmmComponent& c = components_[m];
    double gv = 0.0;
    for (Index d = 0; d < dim_; ++d) {
      const double var = gb * c.var[d] + (1.0 - gb);
      gm[d] = -(x[d] - sg * c.mean[d]) / var;
      gv += gm[d] * v[d];
      out[d] -= r * v[d] / var;
    }
    out += (r * gv) * gm;
    s += r * gm;
  }
  out -= s * s.dot(v);
}

VectorXd TrajectoryGmm::mixture_mean() const {
  VectorXd m = VectorXd::Zero(dim_);
  for (const GmmComponent& c : components_) m += c.weight * c.mean;
  return m;
}

VectorXd TrajectoryGmm::mixture_variance() const {
  const VectorXd mu = mixture_mean();
  VectorXd second = VectorXd::Zero(dim_);
  for (const GmmComponent& c : components_) {
    second += c.weight * (c.var + c.mean.cwiseProduct(c.mean));
  }
  return second - mu.cwiseProduct(mu);
}

VectorXd TrajectoryGmm::sample(Rng& rng) const {
  std::vector<double> w;
  w.reserve(components_.size());
  for (const GmmComponent& c : components_) w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  const GmmComponent& c = components_[pick(rng)];
  return c.mean + c.var.cwiseSqrt().cwiseProduct(normal_vector(rng, dim_));
}

// ---------------------------------------------------------------------------
// EM

GmmFit fit_prior(const MatrixXd& X, int M, const EmOptions& opt) {
  if (M < 1) throw Error("fit_prior: need at least one component");
  const Index n = X.rows();
  const Index D = X.cols();
  if (n < 10 * M) throw Error("fit_prior: need at least 10 samples per component");

  // k-means++ seeding
  Rng rng(opt.seed);
  std::vector<Index> centers;
  centers.push_back(std::uniform_int_distribution<Index>(0, n - 1)(rng));
  VectorXd d2 = (X.rowwise() - X.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < M) {
    const double total = d2.sum();
    Index next = 0;
    if (total > 0.0) {
      double target = uniform(rng, 0.0, total);
      for (next = 0; next < n - 1; ++next) {
        target -= d2[next];
        if (target <= 0.0) break;
      }
    } else {
      next = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    }
    centers.push_back(next);
    d2 = d2.cwiseMin((X.rowwise() - X.row(next)).rowwise().squaredNorm());
  }

  std::vector<GmmComponent> comps(static_cast<std::size_t>(M));
  {
    std::vector<Index> assign(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int m = 0; m < M; ++m) {
        const double d = (X.row(i) - X.row(centers[static_cast<std::size_t>(m)])).squaredNorm();
        if (d < best) {
          best = d;
          assign[static_cast<std::size_t>(i)] = m;
        }
      }
    }
    const VectorXd global_mean = X.colwise().mean();
    const VectorXd global_var =
        ((X.rowwise() - global_mean.transpose()).array().square().colwise().sum() / static_cast<double>(n))
            .matrix()
            .cwiseMax(opt.variance_floor);
    for (int m = 0; m < M; ++m) {
      GmmComponent& c = comps[static_cast<std::size_t>(m)];
      c.mean = X.row(centers[static_cast<std::size_t>(m)]).transpose();
      VectorXd acc = VectorXd::Zero(D);
      Index count = 0;
      for (Index i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] != m) continue;
        acc += (X.row(i).transpose() - c.mean).cwiseAbs2();
        ++count;
      }
      c.var = count > 1 ? VectorXd((acc / static_cast<double>(count)).cwiseMax(opt.variance_floor)) : global_var;
      c.weight = static_cast<double>(std::max<Index>(count, 1));
    }
    double wsum = 0.0;
    for (const auto& c : comps) wsum += c.weight;
    for (auto& c : comps) c.weight /= wsum;
  }

  GmmFitReport report;
  MatrixXd logr(n, M);
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    // E-step
    double ll = 0.0;
    for (int m = 0; m < M; ++m) {
      const GmmComponent& c = comps[static_cast<std::size_t>(m)];
      const double base = std::log(c.weight) - 0.5 * (D * kLog2Pi + c.var.array().log().sum());
      const Eigen::ArrayXd inv = c.var.cwiseInverse().array();
      for (Index i = 0; i < n; ++i) {
        const Eigen::ArrayXd r = X.row(i).transpose().array() - c.mean.array();
        logr(i, m) = base - 0.5 * (r.square() * inv).sum();
      }
    }
    for (Index i = 0; i < n; ++i) {
      const VectorXd row = logr.row(i).transpose();
      const double lse = log_sum_exp(row);
      ll += lse;
      logr.row(i) = (row.array() - lse).exp().transpose();
    }
    ll /= static_cast<double>(n);
    report.log_likelihood.push_back(ll);
    report.iterations = it + 1;

    // M-step
    report.clamped_variances = 0;
    for (int m = 0; m < M; ++m) {
      GmmComponent& c = comps[static_cast<std::size_t>(m)];
      const double Nm = logr.col(m).sum();
      if (Nm < 1e-12) {
        c.weight = 0.0;
        continue;
      }
      c.weight = Nm / static_cast<double>(n);
      c.mean = (X.transpose() * logr.col(m)) / Nm;
      VectorXd var = VectorXd::Zero(D);
      for (Index i = 0; i < n; ++i) {
        var += logr(i, m) * (X.row(i).transpose() - c.mean).cwiseAbs2();
      }
      var /= Nm;
      for (Index d = 0; d < D; ++d) {
        if (var[d] < opt.variance_floor) {
          var[d] = opt.variance_floor;
          ++report.clamped_variances;
        }
      }
      c.var = var;
    }
    double wsum = 0.0;
    for (const auto& c : comps) wsum += c.weight;
    for (auto& c : comps) c.weight /= wsum;

    if (std::abs(ll - prev) < opt.tolerance) {
      report.converged = true;
      break;
    }
    prev = ll;
  }

  std::erase_if(comps, [](const GmmComponent& c) { return c.weight == 0.0; });
  double wsum = 0.0;
  for (const auto& c : comps) wsum += c.weight;
  for (auto& c : comps) c.weight /= wsum;
  return GmmFit{TrajectoryGmm(std::move(comps)), std::move(report)};
}

// ---------------------------------------------------------------------------
// Latent-vector operations

double log_density(const VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched) {
  check_blocks(x, gmm);
  check_index(k, sched);
  const Index D = gmm.dim();
  double total = 0.0;
  for (Index b = 0; b < x.size(); b += D) total += gmm.log_density(x.segment(b, D), sched.gamma_bar(k));
  return total;
}

VectorXd score(const VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched) {
  check_blocks(x, gmm);
  check_index(k, sched);
  const Index D = gmm.dim();
  VectorXd out(x.size());
  for (Index b = 0; b < x.size(); b += D) gmm.score(x.segment(b, D), sched.gamma_bar(k), out.segment(b, D));
  return out;
}

VectorXd forward_project(const VectorXd& x0, int k, const VectorXd& eps, const VpSchedule& sched) {
  check_index(k, sched);
  if (eps.size() != x0.size()) throw Error("forward_project: noise size mismatch");
  const double gb = sched.gamma_bar(k);
  return std::sqrt(gb) * x0 + std::sqrt(1.0 - gb) * eps;
}

VectorXd denoised_prediction(const VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched) {
  check_index(k, sched);
  const double gb = sched.gamma_bar(k);
  if (gb <= 1e-6) throw Error("denoised_prediction: gamma_bar too small");
  return (x + (1.0 - gb) * score(x, k, gmm, sched)) / std::sqrt(gb);
}

VectorXd denoised_vjp(const VectorXd& x, int k, const TrajectoryGmm& gmm, const VpSchedule& sched,
                      const VectorXd& upstream, bool exact_jacobian) {
  check_blocks(x, gmm);
  check_index(k, sched);
  if (!exact_jacobian) return upstream;
  const double gb = sched.gamma_bar(k);
  if (gb <= 1e-6) throw Error("denoised_vjp: gamma_bar too small");
  const Index D = gmm.dim();
  VectorXd hv(x.size());
  for (Index b = 0; b < x.size(); b += D) {
    gmm.hessian_vector(x.segment(b, D), gb, upstream.segment(b, D), hv.segment(b, D));
  }
  return (upstream + (1.0 - gb) * hv) / std::sqrt(gb);
}

// ---------------------------------------------------------------------------
// Codec

LatentCodec LatentCodec::identity(Index dim, double scale) {
  return LatentCodec{MatrixXd::Identity(dim, dim), VectorXd::Constant(dim, scale)};
}

LatentCodec LatentCodec::fit_pca(const MatrixXd& R, double min_scale) {
  if (R.rows() < 2) throw Error("fit_pca: need at least two rows");
  const VectorXd mean = R.colwise().mean();
  const MatrixXd centered = R.rowwise() - mean.transpose();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(R.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  const Index D = R.cols();
  LatentCodec codec{MatrixXd(D, D), VectorXd(D)};
  for (Index j = 0; j < D; ++j) {
    const Index src = D - 1 - j;  // descending eigenvalues
    VectorXd v = eig.eigenvectors().col(src);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    codec.basis.col(j) = v;
    codec.scale[j] = std::sqrt(std::max(eig.eigenvalues()[src], min_scale * min_scale));
  }
  return codec;
}

VectorXd agent_residual(const AgentState& initial, std::span<const Vec2> positions, double dt) {
  const double c = std::cos(initial.heading);
  const double s = std::sin(initial.heading);
  VectorXd r(2 * static_cast<Index>(positions.size()));
  for (std::size_t h = 0; h < positions.size(); ++h) {
    const Vec2 d = positions[h] - initial.position;
    const double lon = c * d.x() + s * d.y();
    const double lat = -s * d.x() + c * d.y();
    r[2 * static_cast<Index>(h)] = lon - initial.speed * static_cast<double>(h + 1) * dt;
    r[2 * static_cast<Index>(h) + 1] = lat;
  }
  return r;
}

JointTrajectory decode_latent(const VectorXd& latent, const Scene& scene, const LatentCodec& codec) {
  const std::size_t N = scene.num_agents();
  const std::size_t H = static_cast<std::size_t>(scene.horizon_steps);
  const Index D = 2 * static_cast<Index>(H);
  if (codec.dim() != D || latent.size() != D * static_cast<Index>(N)) {
    throw Error("decode_latent: latent does not match scene horizon");
  }
  JointTrajectory traj(N, H);
  for (std::size_t i = 0; i < N; ++i) {
    const AgentState& a = scene.agents[i];
    const VectorXd r = codec.decode(latent.segment(static_cast<Index>(i) * D, D));
    const double c = std::cos(a.heading);
    const double s = std::sin(a.heading);
    for (std::size_t h = 0; h < H; ++h) {
      const double lon = r[2 * static_cast<Index>(h)] + a.speed * static_cast<double>(h + 1) * scene.dt_phys;
      const double lat = r[2 * static_cast<Index>(h) + 1];
      traj.at(i, h) = a.position + Vec2(c * lon - s * lat, s * lon + c * lat);
    }
  }
  return traj;
}

VectorXd encode_trajectory(const JointTrajectory& traj, const Scene& scene, const LatentCodec& codec) {
  const std::size_t N = scene.num_agents();
  const Index D = 2 * static_cast<Index>(scene.horizon_steps);
  if (traj.agents() != N || traj.steps() != static_cast<std::size_t>(scene.horizon_steps) || codec.dim() != D) {
    throw Error("encode_trajectory: trajectory does not match scene");
  }
  VectorXd z(D * static_cast<Index>(N));
  for (std::size_t i = 0; i < N; ++i) {
    z.segment(static_cast<Index>(i) * D, D) =
        codec.encode(agent_residual(scene.agents[i], traj.agent(i), scene.dt_phys));
  }
  return z;
}

VectorXd pullback_gradient(const JointTrajectory& grad, const Scene& scene, const LatentCodec& codec) {
  const std::size_t N = scene.num_agents();
  const std::size_t H = static_cast<std::size_t>(scene.horizon_steps);
  const Index D = 2 * static_cast<Index>(H);
  VectorXd out(D * static_cast<Index>(N));
  VectorXd gr(D);
  for (std::size_t i = 0; i < N; ++i) {
    const double c = std::cos(scene.agents[i].heading);
    const double s = std::sin(scene.agents[i].heading);
    for (std::size_t h = 0; h < H; ++h) {
      const Vec2& g = grad.at(i, h);
      gr[2 * static_cast<Index>(h)] = c * g.x() + s * g.y();
      gr[2 * static_cast<Index>(h) + 1] = -s * g.x() + c * g.y();
    }
    out.segment(static_cast<Index>(i) * D, D) = codec.pullback(gr);
  }
  return out;
}

std::pair<TrajectoryPrior, GmmFitReport> fit_trajectory_prior(std::span<const Scene> scenes,
                                                              std::span<const JointTrajectory> trajectories,
                                                              const PriorFitOptions& options) {
  if (scenes.size() != trajectories.size() || scenes.empty()) {
    throw Error("fit_trajectory_prior: need one trajectory per scene");
  }
  const int H = scenes.front().horizon_steps;
  std::size_t rows = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s].horizon_steps != H || trajectories[s].steps() != static_cast<std::size_t>(H)) {
      throw Error("fit_trajectory_prior: all rollouts must share the horizon");
    }
    rows += trajectories[s].agents();
  }
  MatrixXd R(static_cast<Index>(rows), 2 * H);
  Index row = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t i = 0; i < trajectories[s].agents(); ++i) {
      R.row(row++) = agent_residual(scenes[s].agents[i], trajectories[s].agent(i), scenes[s].dt_phys).transpose();
    }
  }
  TrajectoryPrior prior;
  prior.horizon = H;
  prior.codec = LatentCodec::fit_pca(R, options.min_scale);
  MatrixXd Z(R.rows(), R.cols());
  for (Index i = 0; i < R.rows(); ++i) Z.row(i) = prior.codec.encode(R.row(i).transpose()).transpose();
  GmmFit fit = fit_prior(Z, options.components, options.em);
  prior.gmm = std::move(fit.gmm);
  prior.schedule = VpSchedule::with_default_range(options.diffusion_steps);
  return {std::move(prior), std::move(fit.report)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

nlohmann::json prior_to_json(const TrajectoryPrior& prior) {
  nlohmann::json comps = nlohmann::json::array();
  for (const GmmComponent& c : prior.gmm.components()) {
    comps.push_back({{"weight", c.weight}, {"mean", to_std(c.mean)}, {"var_diag", to_std(c.var)}});
  }
  nlohmann::json basis = nlohmann::json::array();
  for (Index r = 0; r < prior.codec.basis.rows(); ++r) {
    basis.push_back(to_std(prior.codec.basis.row(r).transpose()));
  }
  return {{"M", prior.gmm.size()},
          {"H", prior.horizon},
          {"components", comps},
          {"schedule",
           {{"K", prior.schedule.steps()},
            {"beta_min", prior.schedule.beta_min()},
            {"beta_max", prior.schedule.beta_max()}}},
          {"codec", {{"basis", basis}, {"scale", to_std(prior.codec.scale)}}}};
}

TrajectoryPrior prior_from_json(const nlohmann::json& doc) {
  try {
    std::vector<GmmComponent> comps;
    for (const auto& c : doc.at("components")) {
      comps.push_back(GmmComponent{c.at("weight").get<double>(), from_std(c.at("mean").get<std::vector<double>>()),
                                   from_std(c.at("var_diag").get<std::vector<double>>())});
    }
    if (comps.size() != doc.at("M").get<std::size_t>()) throw Error("prior: M does not match components");
    TrajectoryPrior prior;
    prior.gmm = TrajectoryGmm(std::move(comps));
    prior.horizon = doc.at("H").get<int>();
    const auto& s = doc.at("schedule");
    prior.schedule = VpSchedule(s.at("K").get<int>(), s.at("beta_min").get<double>(), s.at("beta_max").get<double>());
    if (doc.contains("codec")) {
      const auto& rows = doc.at("codec").at("basis");
      const Index D = static_cast<Index>(rows.size());
      prior.codec.basis.resize(D, D);
      for (Index r = 0; r < D; ++r) {
        prior.codec.basis.row(r) = from_std(rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>()).transpose();
      }
      prior.codec.scale = from_std(doc.at("codec").at("scale").get<std::vector<double>>());
    } else {
      prior.codec = LatentCodec::identity(prior.gmm.dim());
    }
    if (prior.codec.dim() != prior.gmm.dim()) throw Error("prior: codec and mixture dimensions differ");
    return prior;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed prior: ") + e.what());
  }
}

}  // namespace scenforge
