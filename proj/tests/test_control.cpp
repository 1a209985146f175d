#include "helpers.hpp"
#include "scenforge/control.hpp"

#include <doctest.h>

#include <cmath>

using namespace scenforge;
using Eigen::VectorXd;
using scenforge::testing::agent;

namespace {

constexpr int kH = 8;

struct Fixture {
  Scene scene;
  TrajectoryPrior prior;
  Skeleton skel;
  std::vector<Vec2> ego_ref;

  explicit Fixture(double scale = 0.01) {
    scene.map = testing::straight_map(3, 300.0, 4.0);
    scene.horizon_steps = kH;
    scene.agents = {agent(0, 50, 0, 10, 0, true), agent(1, 30, 4, 12), agent(2, 90, 8, 8)};
    validate(scene);
    const Eigen::Index d = 2 * kH;
    prior.gmm = TrajectoryGmm({GmmComponent{1.0, VectorXd::Zero(d), VectorXd::Ones(d)}});
    prior.codec = LatentCodec::identity(d, scale);
    prior.schedule = VpSchedule::with_default_range(40);
    prior.horizon = kH;
    skel.ego_id = 0;
    skel.near = {1};
    skel.coalition = {1};
    skel.chain = {{1, 0}};
    skel.mask = {0, 1, 0};
    const JointTrajectory cv = testing::constant_velocity(scene);
    ego_ref.assign(cv.agent(0).begin(), cv.agent(0).end());
  }

  GuidanceInputs inputs() const {
    GuidanceInputs in;
    in.scene = &scene;
    in.prior = &prior;
    in.skel = &skel;
    in.ego_ref = ego_ref;
    return in;
  }
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("feasibility potential hand values") {
  Fixture f;
  JointTrajectory pos = testing::constant_velocity(f.scene);
  FeasibilityWeights w;
  CHECK(v_feas_world(pos, f.scene, w).value == 0.0);
  pos.at(2, 4).y() = 8 + 2 + 1;  // 1 m beyond the outer edge of lane 2
  w.speed = 0;
  w.accel = 0;
  const Potential p = v_feas_world(pos, f.scene, w);
  CHECK(p.value == doctest::Approx(1.0));
  CHECK(p.grad.at(2, 4).y() == doctest::Approx(2.0));
}

TEST_CASE("adversarial potential hand values") {
  Fixture f;
  JointTrajectory pos = testing::constant_velocity(f.scene);
  for (std::size_t h = 0; h < kH; ++h) pos.at(1, h) = f.ego_ref[h] + Vec2(0, 10);
  const Potential p = v_adv_world(pos, f.skel, f.scene, f.ego_ref, 2.0, 1.0);
  CHECK(p.value == doctest::Approx(64.0));
  pos.at(1, 3) = f.ego_ref[3] + Vec2(0, 1.5);
  CHECK(v_adv_world(pos, f.skel, f.scene, f.ego_ref, 2.0, 0.01).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("latent potential gradients match finite differences") {
  Fixture f(0.5);
  Rng rng(2);
  FeasibilityWeights w;
  double worst_f = 0, worst_a = 0;
  for (int n = 0; n < 20; ++n) {
    const VectorXd x = normal_vector(rng, 3 * 2 * kH) * 3.0;
    VectorXd gf, ga;
    v_feas(x, f.scene, f.prior.codec, w, &gf);
    v_adv(x, f.skel, f.scene, f.prior.codec, f.ego_ref, 2.0, 1.0, &ga);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      VectorXd xp = x, xm = x;
      xp[i] += 1e-6;
      xm[i] -= 1e-6;
      const double fd_f = (v_feas(xp, f.scene, f.prior.codec, w) - v_feas(xm, f.scene, f.prior.codec, w)) / 2e-6;
      const double fd_a = (v_adv(xp, f.skel, f.scene, f.prior.codec, f.ego_ref, 2.0, 1.0) -
                           v_adv(xm, f.skel, f.scene, f.prior.codec, f.ego_ref, 2.0, 1.0)) / 2e-6;
      worst_f = std::max(worst_f, rel_err(gf[i], fd_f));
      worst_a = std::max(worst_a, rel_err(ga[i], fd_a));
    }
  }
  CHECK(worst_f < 1e-4);
  CHECK(worst_a < 1e-3);
}

TEST_CASE("drift is zero without adversarial gain on a feasible sample") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.eta = 0.0;
  Rng rng(3);
  const VectorXd x = normal_vector(rng, 3 * 2 * kH);
  const Drift d = guided_drift(x, 20, f.inputs(), cfg);
  CHECK(d.u.isZero(0));
  KlLedger ledger;
  CHECK(ledger.add(20, d.u, f.prior.schedule.g2(20), f.prior.schedule.dt()) == 0.0);
}

TEST_CASE("drift is masked and linear in the gain") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.clip = 1e12;
  Rng rng(4);
  const VectorXd x = normal_vector(rng, 3 * 2 * kH);
  const int k = 15;
  cfg.eta = 1.0;
  const Drift d1 = guided_drift(x, k, f.inputs(), cfg);
  cfg.eta = 2.0;
  const Drift d2 = guided_drift(x, k, f.inputs(), cfg);
  const GuidanceTerms t = guidance_terms(x, k, f.inputs(), cfg);
  CHECK(t.feas.isZero(0));
  const double g2 = f.prior.schedule.g2(k);
  CHECK((d1.u + g2 * t.adv).norm() <= 1e-12 * std::max(1.0, d1.u.norm()));
  CHECK((d2.u - 2.0 * d1.u).norm() <= 1e-12 * std::max(1.0, d2.u.norm()));
  const Eigen::Index b = 2 * kH;
  CHECK(d2.u.segment(0, b).isZero(0));
  CHECK(d2.u.segment(2 * b, b).isZero(0));
  CHECK(d2.u.segment(b, b).norm() > 0.0);
}

TEST_CASE("drift clipping bounds the gradient norm") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.eta = 50.0;
  cfg.clip = 0.1;
  Rng rng(5);
  const VectorXd x = normal_vector(rng, 3 * 2 * kH);
  const Drift d = guided_drift(x, 10, f.inputs(), cfg);
  CHECK(d.clipped);
  CHECK(d.u.norm() / f.prior.schedule.g2(10) == doctest::Approx(0.1));
}

TEST_CASE("reverse step") {
  const TrajectoryGmm g({GmmComponent{1.0, VectorXd::Zero(3), VectorXd::Ones(3)}});
  const VpSchedule s = VpSchedule::with_default_range(20);
  const VectorXd x = (VectorXd(3) << 1, -2, 0.5).finished();
  const VectorXd u = (VectorXd(3) << 0.1, 0.2, -0.3).finished();
  const VectorXd xi = (VectorXd(3) << 0.4, 0, -1).finished();
  const int k = 7;
  const double b = s.beta(k);
  // (f - g^2 score) dt = (-bKx/2 + bKx)(-1/K) = -bx/2
  const VectorXd expect = x - 0.5 * b * x + u / 20.0 + std::sqrt(b) * xi;
  CHECK((reverse_step(x, k, u, g, s, xi) - expect).norm() < 1e-14);
  Rng r1(9), r2(9);
  CHECK(reverse_step(x, k, VectorXd::Zero(3), g, s, r1) == reverse_step(x, k, VectorXd::Zero(3), g, s, r2));
}

TEST_CASE("uncontrolled reverse pass recovers a Gaussian prior mean") {
  const TrajectoryGmm g({GmmComponent{1.0, VectorXd::Constant(1, 1.5), VectorXd::Constant(1, 0.5)}});
  const VpSchedule s = VpSchedule::with_default_range(100);
  Rng rng(10);
  const int n = 4000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += integrate_reverse(normal_vector(rng, 1), g, s, rng)[0];
  CHECK(std::abs(sum / n - 1.5) < 3 * std::sqrt(0.5 / n));
}

TEST_CASE("ledger identity for constant control") {
  const double beta = 0.02;
  const int K = 50;
  const VpSchedule s(K, beta, beta);
  const TrajectoryGmm g({GmmComponent{1.0, VectorXd::Zero(2), VectorXd::Ones(2)}});
  const VectorXd u = (VectorXd(2) << 0.3, -0.4).finished();
  KlLedger ledger;
  Rng rng(1);
  integrate_reverse(normal_vector(rng, 2), g, s, rng, [&](const VectorXd&, int) { return u; }, &ledger);
  const double g2 = K * beta;
  CHECK(std::abs(ledger.total - u.squaredNorm() / (2 * g2)) < 1e-9);
  CHECK(ledger.steps.size() == static_cast<std::size_t>(K));
}

TEST_CASE("anchor injection identities") {
  const VpSchedule s = VpSchedule::with_default_range(30);
  const VectorXd x = (VectorXd(3) << 0.3, 1, -1).finished();
  const VectorXd x0 = (VectorXd(3) << 2, 4, 0).finished();
  const VectorXd eps = (VectorXd(3) << 1, 1, 1).finished();
  CHECK(anchor_inject(x, x0, 0.0, 9, s, eps) == x);
  const VectorXd full = anchor_inject(x, x0, 1.0, 9, s, VectorXd::Zero(3));
  CHECK((full - std::sqrt(s.gamma_bar(9)) * x0).norm() < 1e-12);
  const VectorXd zero = VectorXd::Zero(3);
  const VectorXd proj = forward_project(x0, 9, eps, s);
  CHECK((anchor_inject(zero, x0, 0.5, 9, s, eps) - 0.5 * proj).norm() < 1e-12);
}

TEST_CASE("guidance config validation") {
  GuidanceConfig c;
  CHECK_NOTHROW(validate(c, 100));
  CHECK(c.anchor_index(100) == 30);
  c.eta = -1;
  CHECK_THROWS_AS(validate(c, 100), Error);
  c = GuidanceConfig{};
  c.alpha = 0.0;
  CHECK_THROWS_AS(validate(c, 100), Error);
  c = GuidanceConfig{};
  c.anchor_frac = 1.0;
  CHECK_THROWS_AS(validate(c, 100), Error);
  c.anchoring = false;
  CHECK_NOTHROW(validate(c, 100));
}

TEST_CASE("synthesis is deterministic and masks non-coalition agents") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.anchoring = false;
  cfg.eta = 0.0;
  const Synthesis a = synthesize(f.inputs(), cfg, 42);
  const Synthesis b = synthesize(f.inputs(), cfg, 42);
  CHECK(a.latent == b.latent);
  CHECK(a.ledger.total == 0.0);
  cfg.eta = 3.0;
  const Synthesis c = synthesize(f.inputs(), cfg, 42);
  CHECK(c.ledger.total > 0.0);
  const Eigen::Index blk = 2 * kH;
  CHECK(c.latent.segment(0, blk) == a.latent.segment(0, blk));
  CHECK(c.latent.segment(2 * blk, blk) == a.latent.segment(2 * blk, blk));
  CHECK(c.latent.segment(blk, blk) != a.latent.segment(blk, blk));
  for (std::size_t h = 0; h < kH; ++h) CHECK(c.traj.at(2, h) == a.traj.at(2, h));
}

TEST_CASE("uncontrolled synthesis equals the plain reverse pass") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.anchoring = false;
  cfg.eta = 0.0;
  const Synthesis s = synthesize(f.inputs(), cfg, 7);
  Rng rng(7);
  const VectorXd xT = normal_vector(rng, 3 * 2 * kH);
  const VectorXd plain = integrate_reverse(xT, f.prior.gmm, f.prior.schedule, rng);
  CHECK((s.latent - plain).norm() < 1e-12);
}

TEST_CASE("anchoring applies once at the anchor index") {
  Fixture f;
  GuidanceConfig cfg;
  cfg.eta = 1.0;
  const JointTrajectory clean = testing::constant_velocity(f.scene);
  const VectorXd anchor = encode_trajectory(clean, f.scene, f.prior.codec);
  GuidanceInputs in = f.inputs();
  in.anchor_clean = &anchor;
  const Synthesis s = synthesize(in, cfg, 5);
  CHECK(s.anchor_applied);
  CHECK(s.anchor_index == 12);
  const Synthesis t = synthesize(in, cfg, 5);
  CHECK(s.latent == t.latent);
}
