#pragma once

#include "scenforge/simloop.hpp"
#include "scenforge/world.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scenforge {

struct MetricsReport {
  std::size_t episodes = 0;
  double cfr = 0.0;
  double min_dtc = 0.0;
  std::optional<double> rel_vel;  // absent when no episode collided
  double rir = 0.0;
  double front = 0.0;
  double side = 0.0;
  double ttc_cost = 0.0;
  double m_acc = 0.0;
  double aor = 0.0;
  std::optional<double> real;
};

struct MetricsParams {
  double ttc_crit = 3.0;      // s
  double offroad_margin = 0.25;
  int offroad_debounce = 3;   // consecutive steps
};

/// Per-episode quantities that the batch metrics average.
double episode_min_dtc(const Rollout& r);
double episode_ttc_cost(const Rollout& r, double ttc_crit = 3.0);
double episode_mean_abs_accel(const Rollout& r);
/// True when any agent has offroad events on >= debounce consecutive steps.
bool episode_offroad(const Rollout& r, const MetricsParams& p = {});

/// CFR, MinDTC, RelVel, impact-class rates, TTC-C and mAcc over a batch.
MetricsReport safety_metrics(std::span<const Rollout> batch, const MetricsParams& p = {});

/// All-off-road rate.
double validity_metrics(std::span<const Rollout> batch, const MetricsParams& p = {});

/// 1-D Wasserstein-1 between empirical distributions (any sizes).
double wasserstein1(std::vector<double> a, std::vector<double> b);

/// Interquartile range with linear interpolation, floored at 1e-3.
double iqr_scale(std::vector<double> v);

struct KinematicSamples {
  std::vector<double> speed;
  std::vector<double> accel;
  std::vector<double> lat_accel;

  void append(const KinematicSamples& o);
};

/// Pooled speed and accelerations of every agent in a trajectory.
KinematicSamples kinematic_samples(const JointTrajectory& traj, double dt, std::span<const double> initial_headings);
KinematicSamples kinematic_samples(const Rollout& r);

/// exp(-mean_sigma W1_sigma / IQR_ref_sigma) over speed, longitudinal and lateral accel.
double realism_score(const KinematicSamples& sim, const KinematicSamples& ref);

MetricsReport evaluate(std::span<const Rollout> batch, const KinematicSamples* reference = nullptr,
                       const MetricsParams& p = {});

nlohmann::json report_to_json(const MetricsReport& m);
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& m);

}  // namespace scenforge
