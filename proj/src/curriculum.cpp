#include "scenforge/curriculum.hpp"

#include "scenforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace scenforge {

std::string to_string(SupportSelection s) {
  switch (s) {
    case SupportSelection::topo_feas: return "topo_feas";
    case SupportSelection::topo_only: return "topo_only";
    case SupportSelection::random_k: return "random_k";
  }
  return "topo_feas";
}

SupportSelection support_selection_from_string(const std::string& s) {
  if (s == "topo_feas") return SupportSelection::topo_feas;
  if (s == "topo_only") return SupportSelection::topo_only;
  if (s == "random_k") return SupportSelection::random_k;
  throw Error("unknown support selection '" + s + "'");
}

nlohmann::json pipeline_to_json(const PipelineConfig& c) {
  nlohmann::json d;
  d["risk"] = {{"tau_max", c.risk.tau_max}, {"beta", c.risk.beta},   {"eps_w", c.risk.eps_w},
               {"k_clique", c.risk.k_clique}, {"m_top", c.risk.m_top}, {"k_top", c.risk.k_top}};
  const TargetingParams& t = c.targeting;
  d["targeting"] = {{"lane_margin", t.lane_margin}, {"d_conflict", t.d_conflict},
                    {"min_mean_speed", t.min_mean_speed}, {"blocking_ahead", t.blocking_ahead},
                    {"k_near", t.k_near}, {"k_far", t.k_far}, {"tau_dist", t.tau_dist}, {"tau_long", t.tau_long},
                    {"v_max", t.v_max}, {"kappa_max", t.kappa_max}, {"d_goal", t.d_goal},
                    {"min_lane_change", t.min_lane_change}, {"anchor_accel", t.anchor_accel}};
  const GuidanceConfig& g = c.guidance;
  d["guidance"] = {{"alpha", g.alpha}, {"anchor_frac", g.anchor_frac}, {"anchoring", g.anchoring},
                   {"w_offroad", g.feas.offroad}, {"w_speed", g.feas.speed}, {"w_accel", g.feas.accel},
                   {"v_max", g.feas.v_max}, {"a_max", g.feas.a_max}, {"w_adv", g.w_adv}, {"d_goal", g.d_goal},
                   {"temperature", g.temperature}, {"clip", g.clip}, {"exact_jacobian", g.exact_jacobian}};
  d["sim"] = {{"b_max", c.sim.b_max}, {"replan_every", c.sim.replan_every}, {"max_steer", c.sim.max_steer},
              {"env_accel_limit", c.sim.env_accel_limit}, {"env_yaw_rate", c.sim.env_yaw_rate},
              {"offroad_event", c.sim.offroad_event}};
  d["selection"] = to_string(c.selection);
  d["anchor_at_zero_eta"] = c.anchor_at_zero_eta;
  return d;
}

PipelineConfig pipeline_from_json(const nlohmann::json& d) {
  PipelineConfig c;
  if (d.contains("risk")) {
    const auto& r = d["risk"];
    c.risk.tau_max = r.value("tau_max", c.risk.tau_max);
    c.risk.beta = r.value("beta", c.risk.beta);
    c.risk.eps_w = r.value("eps_w", c.risk.eps_w);
    c.risk.k_clique = r.value("k_clique", c.risk.k_clique);
    c.risk.m_top = r.value("m_top", c.risk.m_top);
    c.risk.k_top = r.value("k_top", c.risk.k_top);
  }
  if (d.contains("targeting")) {
    const auto& r = d["targeting"];
    TargetingParams& t = c.targeting;
    t.lane_margin = r.value("lane_margin", t.lane_margin);
    t.d_conflict = r.value("d_conflict", t.d_conflict);
    t.min_mean_speed = r.value("min_mean_speed", t.min_mean_speed);
    t.blocking_ahead = r.value("blocking_ahead", t.blocking_ahead);
    t.k_near = r.value("k_near", t.k_near);
    t.k_far = r.value("k_far", t.k_far);
    t.tau_dist = r.value("tau_dist", t.tau_dist);
    t.tau_long = r.value("tau_long", t.tau_long);
    t.v_max = r.value("v_max", t.v_max);
    t.kappa_max = r.value("kappa_max", t.kappa_max);
    t.d_goal = r.value("d_goal", t.d_goal);
    t.min_lane_change = r.value("min_lane_change", t.min_lane_change);
    t.anchor_accel = r.value("anchor_accel", t.anchor_accel);
  }
  if (d.contains("guidance")) {
    const auto& r = d["guidance"];
    GuidanceConfig& g = c.guidance;
    g.alpha = r.value("alpha", g.alpha);
    g.anchor_frac = r.value("anchor_frac", g.anchor_frac);
    g.anchoring = r.value("anchoring", g.anchoring);
    g.feas.offroad = r.value("w_offroad", g.feas.offroad);
    g.feas.speed = r.value("w_speed", g.feas.speed);
    g.feas.accel = r.value("w_accel", g.feas.accel);
    g.feas.v_max = r.value("v_max", g.feas.v_max);
    g.feas.a_max = r.value("a_max", g.feas.a_max);
    g.w_adv = r.value("w_adv", g.w_adv);
    g.d_goal = r.value("d_goal", g.d_goal);
    g.temperature = r.value("temperature", g.temperature);
    g.clip = r.value("clip", g.clip);
    g.exact_jacobian = r.value("exact_jacobian", g.exact_jacobian);
  }
  if (d.contains("sim")) {
    const auto& r = d["sim"];
    c.sim.b_max = r.value("b_max", c.sim.b_max);
    c.sim.replan_every = r.value("replan_every", c.sim.replan_every);
    c.sim.max_steer = r.value("max_steer", c.sim.max_steer);
    c.sim.env_accel_limit = r.value("env_accel_limit", c.sim.env_accel_limit);
    c.sim.env_yaw_rate = r.value("env_yaw_rate", c.sim.env_yaw_rate);
    c.sim.offroad_event = r.value("offroad_event", c.sim.offroad_event);
  }
  if (d.contains("selection")) c.selection = support_selection_from_string(d["selection"].get<std::string>());
  c.anchor_at_zero_eta = d.value("anchor_at_zero_eta", c.anchor_at_zero_eta);
  return c;
}

ReferenceRun run_reference(const Scene& scene, const TrajectoryPrior& prior, const EgoPolicyParams& policy,
                           const PipelineConfig& cfg, std::uint64_t seed) {
  GuidanceConfig g = cfg.guidance;
  g.eta = 0.0;
  g.anchoring = false;
  GuidanceInputs in;
  in.scene = &scene;
  in.prior = &prior;
  ReferenceRun ref;
  ref.synth = synthesize(in, g, seed);
  ref.rollout = run_closed_loop(scene, ref.synth.traj, policy, cfg.sim);
  ref.rollout.seed = seed;
  ref.positions = rollout_positions(ref.rollout, static_cast<std::size_t>(scene.horizon_steps));
  const auto graphs = build_graphs(ref.rollout.frames, cfg.risk);
  ref.scores = temporal_scores(graphs, cfg.risk.k_clique, cfg.risk.m_top, cfg.risk.k_top, scene.ego().agent_id);
  return ref;
}

Targets select_targets(const Scene& scene, const TrajectoryPrior& prior, const ReferenceRun& ref,
                       const PipelineConfig& cfg, std::uint64_t seed) {
  Targets t;
  switch (cfg.selection) {
    case SupportSelection::topo_feas:
      t.mask = semantic_filter(ref.scores.s_top, scene, ref.positions, cfg.targeting);
      t.support = intersect_support(ref.scores.s_top, t.mask);
      break;
    case SupportSelection::topo_only:
      t.support = ref.scores.s_top;
      for (int id : t.support) t.mask.reason[id] = Rejection::accepted;
      break;
    case SupportSelection::random_k: {
      std::vector<int> ids;
      for (const AgentState& a : scene.agents) {
        if (!a.is_ego) ids.push_back(a.agent_id);
      }
      Rng rng(mix_seed(seed, 0x7a4dULL));
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(cfg.risk.k_top)));
      t.support = ids;
      for (int id : t.support) t.mask.reason[id] = Rejection::accepted;
      break;
    }
  }
  if (t.support.empty()) {
    t.skipped = true;
    t.reason = "no feasible adversaries";
    return t;
  }
  t.skeleton = build_skeleton(t.support, scene, ref.positions, cfg.targeting);
  t.anchor = make_anchor(t.skeleton, scene, ref.positions, cfg.targeting);
  t.anchor_latent = encode_trajectory(t.anchor.clean, scene, prior.codec);
  return t;
}

EpisodeResult adversarial_episode(const NamedScene& named, const TrajectoryPrior& prior,
                                  const EgoPolicyParams& policy, const PipelineConfig& cfg, const ReferenceRun& ref,
                                  const Targets& targets, double eta, std::uint64_t seed) {
  const Scene& scene = named.scene;
  EpisodeResult out;
  out.scene_id = named.id;
  out.seed = seed;
  out.eta = eta;
  if (targets.skipped) {
    out.skipped = true;
    out.skip_reason = targets.reason;
    return out;
  }
  out.skeleton = targets.skeleton;
  if (eta == 0.0 && !cfg.anchor_at_zero_eta) {
    out.synth = ref.synth;
    out.rollout = ref.rollout;
  } else {
    GuidanceConfig g = cfg.guidance;
    g.eta = eta;
    GuidanceInputs in;
    in.scene = &scene;
    in.prior = &prior;
    in.skel = &targets.skeleton;
    const auto ego_path = ref.positions.agent(scene.ego_index);
    in.ego_ref.assign(ego_path.begin(), ego_path.end());
    if (g.anchoring) in.anchor_clean = &targets.anchor_latent;
    out.synth = synthesize(in, g, seed);
    out.rollout = run_closed_loop(scene, out.synth.traj, policy, cfg.sim);
  }
  out.env_traj = out.synth.traj;
  out.kl = out.synth.ledger.total;
  out.rollout.scenario_id = named.id;
  out.rollout.seed = seed;
  return out;
}

EpisodeResult run_episode(const NamedScene& named, const TrajectoryPrior& prior, const EgoPolicyParams& policy,
                          const PipelineConfig& cfg, double eta, std::uint64_t seed) {
  const ReferenceRun ref = run_reference(named.scene, prior, policy, cfg, seed);
  const Targets targets = select_targets(named.scene, prior, ref, cfg, seed);
  return adversarial_episode(named, prior, policy, cfg, ref, targets, eta, seed);
}

std::uint64_t cell_seed(std::uint64_t global, std::size_t scene, std::size_t seed_index) {
  return mix_seed({global, static_cast<std::uint64_t>(scene), static_cast<std::uint64_t>(seed_index)});
}

std::vector<SweepCell> run_sweep(std::span<const NamedScene> scenes, const TrajectoryPrior& prior,
                                 const EgoPolicyParams& policy, const PipelineConfig& cfg,
                                 std::span<const double> etas, int seeds, std::uint64_t global_seed, int workers) {
  const std::size_t S = static_cast<std::size_t>(std::max(0, seeds));
  const std::size_t E = etas.size();
  std::vector<SweepCell> cells(scenes.size() * S * E);
  parallel_for(scenes.size() * S, workers, [&](std::size_t task) {
    const std::size_t j = task / S;
    const std::size_t s = task % S;
    const std::uint64_t seed = cell_seed(global_seed, j, s);
    const ReferenceRun ref = run_reference(scenes[j].scene, prior, policy, cfg, seed);
    const Targets targets = select_targets(scenes[j].scene, prior, ref, cfg, seed);
    for (std::size_t e = 0; e < E; ++e) {
      SweepCell& c = cells[task * E + e];
      c.scene = j;
      c.seed_index = s;
      c.eta = etas[e];
      c.result = adversarial_episode(scenes[j], prior, policy, cfg, ref, targets, etas[e], seed);
    }
  });
  return cells;
}

// ---------------------------------------------------------------------------
// Curriculum

nlohmann::json curriculum_to_json(const CurriculumConfig& c) {
  const CemConfig& m = c.cem;
  return {{"rounds", c.rounds},
          {"etas", c.etas},
          {"seeds_per_scene", c.seeds_per_scene},
          {"eval_seeds", c.eval_seeds},
          {"eta_increase", c.eta_increase},
          {"cem",
           {{"population", m.population}, {"elite_frac", m.elite_frac}, {"iterations", m.iterations},
            {"sigma_frac", m.sigma_frac}, {"w_collision", m.w_collision}, {"w_ttc", m.w_ttc}, {"w_acc", m.w_acc},
            {"active", m.active}}},
          {"pipeline", pipeline_to_json(c.pipeline)},
          {"seed", c.seed},
          {"workers", c.workers}};
}

CurriculumConfig curriculum_from_json(const nlohmann::json& d) {
  CurriculumConfig c;
  c.rounds = d.value("rounds", c.rounds);
  if (d.contains("etas")) c.etas = d["etas"].get<std::vector<double>>();
  c.seeds_per_scene = d.value("seeds_per_scene", c.seeds_per_scene);
  c.eval_seeds = d.value("eval_seeds", c.eval_seeds);
  c.eta_increase = d.value("eta_increase", c.eta_increase);
  if (d.contains("cem")) {
    const auto& r = d["cem"];
    CemConfig& m = c.cem;
    m.population = r.value("population", m.population);
    m.elite_frac = r.value("elite_frac", m.elite_frac);
    m.iterations = r.value("iterations", m.iterations);
    m.sigma_frac = r.value("sigma_frac", m.sigma_frac);
    m.w_collision = r.value("w_collision", m.w_collision);
    m.w_ttc = r.value("w_ttc", m.w_ttc);
    m.w_acc = r.value("w_acc", m.w_acc);
    if (r.contains("active")) m.active = r["active"].get<std::vector<int>>();
  }
  if (d.contains("pipeline")) c.pipeline = pipeline_from_json(d["pipeline"]);
  c.seed = d.value("seed", c.seed);
  c.workers = d.value("workers", c.workers);
  return c;
}

void validate(const CemConfig& c) {
  if (c.population < 4) throw Error("cem: population must be >= 4");
  if (!(c.elite_frac > 0.0 && c.elite_frac <= 0.5)) throw Error("cem: elite fraction must lie in (0, 0.5]");
  if (c.iterations < 1) throw Error("cem: iterations must be >= 1");
  if (c.sigma_frac < 0.0) throw Error("cem: sigma must be >= 0");
  if (c.w_collision < 0 || c.w_ttc < 0 || c.w_acc < 0) throw Error("cem: weights must be >= 0");
  for (int d : c.active) {
    if (d < 0) throw Error("cem: negative parameter index");
  }
}

void validate(const CurriculumConfig& c) {
  if (c.rounds < 0) throw Error("curriculum: rounds must be >= 0");
  if (static_cast<int>(c.etas.size()) != c.rounds) throw Error("curriculum: need one eta per round");
  for (std::size_t r = 0; r < c.etas.size(); ++r) {
    if (c.etas[r] < 0.0) throw Error("curriculum: eta must be >= 0");
    if (r > 0 && c.etas[r] < c.etas[r - 1]) throw Error("curriculum: eta schedule must be non-decreasing");
  }
  if (c.seeds_per_scene < 1 || c.eval_seeds < 1) throw Error("curriculum: need at least one seed");
  validate(c.cem);
}

namespace {

MetricsReport safe_report(std::span<const Rollout> batch) {
  if (batch.empty()) return MetricsReport{};
  return evaluate(batch);
}

double entry_cost(const Rollout& r, const CemConfig& cem) {
  if (r.invalid) return std::numeric_limits<double>::infinity();
  return cem.w_collision * (r.collided ? 1.0 : 0.0) + cem.w_ttc * episode_ttc_cost(r) +
         cem.w_acc * episode_mean_abs_accel(r);
}

double objective_serial(const EgoPolicyParams& policy, const AdversarialBuffer& buffer,
                        std::span<const NamedScene> scenes, const CemConfig& cem, const SimConfig& sim) {
  double sum = 0.0;
  for (const BufferEntry& e : buffer.entries) {
    sum += entry_cost(run_closed_loop(scenes[e.scene].scene, e.env_traj, policy, sim), cem);
  }
  return sum / static_cast<double>(buffer.entries.size());
}

}  // namespace

RoundResult run_round(int round, const EgoPolicyParams& policy, std::span<const NamedScene> scenes,
                      const TrajectoryPrior& prior, const CurriculumConfig& cfg) {
  RoundResult out;
  out.eta = cfg.etas.at(static_cast<std::size_t>(round));
  const std::size_t S = static_cast<std::size_t>(cfg.seeds_per_scene);
  const std::uint64_t round_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(round) + 1);
  std::vector<EpisodeResult> results(scenes.size() * S);
  parallel_for(results.size(), cfg.workers, [&](std::size_t task) {
    const std::size_t j = task / S;
    results[task] = run_episode(scenes[j], prior, policy, cfg.pipeline, out.eta, cell_seed(round_seed, j, task % S));
  });
  std::vector<Rollout> batch;
  for (std::size_t task = 0; task < results.size(); ++task) {
    EpisodeResult& r = results[task];
    if (r.skipped) {
      ++out.skipped;
      continue;
    }
    batch.push_back(r.rollout);
    out.buffer.entries.push_back(
        {round, task / S, r.scene_id, r.seed, std::move(r.skeleton), std::move(r.env_traj), std::move(r.rollout), policy});
  }
  out.report = safe_report(batch);
  return out;
}

double buffer_objective(const EgoPolicyParams& policy, const AdversarialBuffer& buffer,
                        std::span<const NamedScene> scenes, const CemConfig& cem, const SimConfig& sim, int workers) {
  if (buffer.entries.empty()) throw Error("buffer_objective: empty buffer");
  std::vector<double> costs(buffer.entries.size());
  parallel_for(costs.size(), workers, [&](std::size_t i) {
    const BufferEntry& e = buffer.entries[i];
    costs[i] = entry_cost(run_closed_loop(scenes[e.scene].scene, e.env_traj, policy, sim), cem);
  });
  double sum = 0.0;
  for (double c : costs) sum += c;
  return sum / static_cast<double>(costs.size());
}

UpdateResult update_policy(const EgoPolicyParams& policy, const AdversarialBuffer& buffer,
                           std::span<const NamedScene> scenes, const CemConfig& cem, const SimConfig& sim, Rng& rng,
                           int workers) {
  if (buffer.entries.empty()) throw Error("update_policy: empty buffer");
  validate(cem);
  UpdateResult out;
  out.policy = policy;
  out.incumbent_objective = buffer_objective(policy, buffer, scenes, cem, sim, workers);
  out.objective = out.incumbent_objective;

  bool any_collision = false;
  for (const BufferEntry& e : buffer.entries) {
    any_collision = any_collision || run_closed_loop(scenes[e.scene].scene, e.env_traj, policy, sim).collided;
  }
  if (!any_collision) return out;

  const auto bounds = policy.bounds();
  const std::size_t D = bounds.size();
  std::vector<double> mean = policy.vector();
  std::vector<double> sigma(D);
  for (std::size_t d = 0; d < D; ++d) sigma[d] = cem.sigma_frac * (bounds[d].second - bounds[d].first);
  if (!cem.active.empty()) {
    std::vector<double> frozen(D, 0.0);
    for (int d : cem.active) {
      if (static_cast<std::size_t>(d) >= D) throw Error("cem: parameter index out of range");
      frozen[static_cast<std::size_t>(d)] = 1.0;
    }
    for (std::size_t d = 0; d < D; ++d) sigma[d] *= frozen[d];
  }

  const std::size_t P = static_cast<std::size_t>(cem.population);
  const std::size_t n_elite = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cem.elite_frac * P)));
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int it = 0; it < cem.iterations; ++it) {
    std::vector<EgoPolicyParams> cand(P, policy);
    for (std::size_t c = 0; c < P; ++c) {
      std::vector<double> v(D);
      for (std::size_t d = 0; d < D; ++d) {
        v[d] = std::clamp(mean[d] + sigma[d] * normal(rng), bounds[d].first, bounds[d].second);
      }
      cand[c].set_vector(v);
    }
    std::vector<double> j(P);
    parallel_for(P, workers, [&](std::size_t c) { j[c] = objective_serial(cand[c], buffer, scenes, cem, sim); });
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return j[a] < j[b]; });
    std::size_t finite = 0;
    for (std::size_t c = 0; c < P; ++c) {
      if (std::isfinite(j[c])) {
        ++finite;
      } else {
        ++out.invalid_candidates;
      }
    }
    if (finite == 0) continue;
    const std::size_t k = std::min(n_elite, finite);
    for (std::size_t d = 0; d < D; ++d) {
      double m = 0.0;
      for (std::size_t e = 0; e < k; ++e) m += cand[order[e]].vector()[d];
      m /= static_cast<double>(k);
      double var = 0.0;
      for (std::size_t e = 0; e < k; ++e) {
        const double x = cand[order[e]].vector()[d] - m;
        var += x * x;
      }
      mean[d] = m;
      sigma[d] = std::sqrt(var / static_cast<double>(k));
    }
  }
  EgoPolicyParams elite_mean = policy;
  elite_mean.set_vector(mean);
  const double j_mean = buffer_objective(elite_mean, buffer, scenes, cem, sim, workers);
  if (j_mean < out.incumbent_objective) {
    out.policy = elite_mean;
    out.objective = j_mean;
    out.improved = true;
  }
  return out;
}

std::vector<Rollout> evaluate_policy(const EgoPolicyParams& policy, std::span<const NamedScene> scenes,
                                     const TrajectoryPrior& prior, const PipelineConfig& cfg, double eta, int seeds,
                                     std::uint64_t seed, int workers) {
  const std::size_t S = static_cast<std::size_t>(seeds);
  std::vector<EpisodeResult> results(scenes.size() * S);
  parallel_for(results.size(), workers, [&](std::size_t task) {
    const std::size_t j = task / S;
    results[task] = run_episode(scenes[j], prior, policy, cfg, eta, cell_seed(seed, j, task % S));
  });
  std::vector<Rollout> out;
  for (EpisodeResult& r : results) {
    if (!r.skipped) out.push_back(std::move(r.rollout));
  }
  return out;
}

GainRow gain_row(const std::string& split, double eta, const MetricsReport& before, const MetricsReport& after) {
  GainRow g{split, eta, before, after, 0.0, 0.0, 0.0, 0.0};
  auto reduction = [](double b, double a) { return b > 0.0 ? 100.0 * (b - a) / b : 0.0; };
  g.failure_rate = reduction(before.cfr, after.cfr);
  g.min_dtc = before.min_dtc > 0.0 ? 100.0 * (after.min_dtc - before.min_dtc) / before.min_dtc : 0.0;
  g.ttc_cost = reduction(before.ttc_cost, after.ttc_cost);
  g.mean_accel = reduction(before.m_acc, after.m_acc);
  return g;
}

CurriculumResult run_curriculum(const CurriculumConfig& cfg, std::span<const NamedScene> tuning,
                                std::span<const NamedScene> test, const TrajectoryPrior& prior,
                                const EgoPolicyParams& policy0) {
  validate(cfg);
  for (const NamedScene& a : tuning) {
    for (const NamedScene& b : test) {
      if (a.id == b.id) throw Error("curriculum: tuning and test splits share scene " + a.id);
    }
  }
  CurriculumResult out;
  out.initial = policy0;
  EgoPolicyParams policy = policy0;
  for (int r = 0; r < cfg.rounds; ++r) {
    out.policies.push_back(policy);
    for (const NamedScene& s : tuning) out.access_log.push_back({"round-" + std::to_string(r), "tuning", s.id});
    RoundResult rr = run_round(r, policy, tuning, prior, cfg);
    UpdateResult up;
    up.policy = policy;
    if (!rr.buffer.entries.empty()) {
      for (const NamedScene& s : tuning) out.access_log.push_back({"update-" + std::to_string(r), "tuning", s.id});
      Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r)));
      up = update_policy(policy, rr.buffer, tuning, cfg.cem, cfg.pipeline.sim, rng, cfg.workers);
    }
    policy = up.policy;
    out.rounds.push_back(std::move(rr));
    out.updates.push_back(up);
  }
  out.final_policy = policy;

  const double matched = cfg.etas.empty() ? 1.0 : cfg.etas.back();
  const double increased = matched + cfg.eta_increase;
  const std::uint64_t eval_seed = mix_seed(cfg.seed, 0xe7a1ULL);
  struct Split {
    const char* name;
    std::span<const NamedScene> scenes;
  };
  for (const Split& sp : {Split{"tuning", tuning}, Split{"test", test}}) {
    for (const NamedScene& s : sp.scenes) out.access_log.push_back({"final", sp.name, s.id});
    for (double eta : {matched, increased}) {
      const auto before = evaluate_policy(out.initial, sp.scenes, prior, cfg.pipeline, eta, cfg.eval_seeds,
                                          eval_seed, cfg.workers);
      const auto after = evaluate_policy(out.final_policy, sp.scenes, prior, cfg.pipeline, eta, cfg.eval_seeds,
                                         eval_seed, cfg.workers);
      out.gains.push_back(gain_row(sp.name, eta, safe_report(before), safe_report(after)));
    }
  }
  return out;
}

std::string gain_table_csv(std::span<const GainRow> rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "split,eta,cfr_before,cfr_after,failure_rate_gain,min_dtc_before,min_dtc_after,min_dtc_gain,"
        "ttc_cost_before,ttc_cost_after,ttc_cost_gain,m_acc_before,m_acc_after,mean_accel_gain\n";
  for (const GainRow& g : rows) {
    os << g.split << ',' << g.eta << ',' << g.before.cfr << ',' << g.after.cfr << ',' << g.failure_rate << ','
       << g.before.min_dtc << ',' << g.after.min_dtc << ',' << g.min_dtc << ',' << g.before.ttc_cost << ','
       << g.after.ttc_cost << ',' << g.ttc_cost << ',' << g.before.m_acc << ',' << g.after.m_acc << ','
       << g.mean_accel << '\n';
  }
  return os.str();
}

TrajectoryPrior train_default_prior(int scenes, std::uint64_t seed, const PriorFitOptions& opts,
                                    GmmFitReport* report) {
  const auto suite = mixed_suite(scenes, seed);
  std::vector<Scene> sc;
  std::vector<JointTrajectory> trajs;
  for (std::size_t j = 0; j < suite.size(); ++j) {
    for (std::uint64_t rep = 0; rep < 2; ++rep) {
      Rng rng(mix_seed({seed, static_cast<std::uint64_t>(j), rep}));
      sc.push_back(suite[j].scene);
      trajs.push_back(simulate_traffic(suite[j].scene, rng));
    }
  }
  auto [prior, rep] = fit_trajectory_prior(sc, trajs, opts);
  if (report) *report = rep;
  return prior;
}

KinematicSamples reference_kinematics(std::span<const NamedScene> scenes, std::uint64_t seed, int per_scene) {
  KinematicSamples out;
  for (std::size_t j = 0; j < scenes.size(); ++j) {
    std::vector<double> headings;
    for (const AgentState& a : scenes[j].scene.agents) headings.push_back(a.heading);
    for (int rep = 0; rep < per_scene; ++rep) {
      Rng rng(mix_seed({seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(rep)}));
      const JointTrajectory t = simulate_traffic(scenes[j].scene, rng);
      out.append(kinematic_samples(t, scenes[j].scene.dt_phys, headings));
    }
  }
  return out;
}

}  // namespace scenforge
