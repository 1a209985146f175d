#include "scenforge/cli.hpp"

#include "scenforge/parallel.hpp"
#include "scenforge/riskgraph.hpp"
#include "scenforge/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace scenforge {

namespace fs = std::filesystem;

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json d;
  d["command"] = c.command;
  d["seed"] = c.seed;
  d["workers"] = c.workers;
  d["out"] = c.out;
  d["scenes"] = {{"dir", c.scenes_dir},
                 {"test_dir", c.test_scenes_dir},
                 {"file", c.scene_file},
                 {"template", c.scene_template},
                 {"count", c.scene_count},
                 {"suite_seed", c.suite_seed},
                 {"test_count", c.test_count},
                 {"test_suite_seed", c.test_suite_seed}};
  d["prior"] = {{"path", c.prior_path}, {"scenes", c.prior_scenes}, {"seed", c.prior_seed}};
  d["etas"] = c.etas;
  d["seeds"] = c.seeds;
  d["dump_rollouts"] = c.dump_rollouts;
  d["policy"] = policy_to_json(c.policy);
  d["pipeline"] = pipeline_to_json(c.pipeline);
  nlohmann::json cur = curriculum_to_json(c.curriculum);
  cur.erase("pipeline");
  cur.erase("seed");
  cur.erase("workers");
  d["curriculum"] = cur;
  return d;
}

RunConfig run_config_from_json(const nlohmann::json& d) {
  RunConfig c;
  c.command = d.value("command", c.command);
  c.seed = d.value("seed", c.seed);
  c.workers = d.value("workers", c.workers);
  c.out = d.value("out", c.out);
  if (d.contains("scenes")) {
    const auto& s = d["scenes"];
    c.scenes_dir = s.value("dir", c.scenes_dir);
    c.test_scenes_dir = s.value("test_dir", c.test_scenes_dir);
    c.scene_file = s.value("file", c.scene_file);
    c.scene_template = s.value("template", c.scene_template);
    c.scene_count = s.value("count", c.scene_count);
    c.suite_seed = s.value("suite_seed", c.suite_seed);
    c.test_count = s.value("test_count", c.test_count);
    c.test_suite_seed = s.value("test_suite_seed", c.test_suite_seed);
  }
  if (d.contains("prior")) {
    const auto& p = d["prior"];
    c.prior_path = p.value("path", c.prior_path);
    c.prior_scenes = p.value("scenes", c.prior_scenes);
    c.prior_seed = p.value("seed", c.prior_seed);
  }
  if (d.contains("etas")) c.etas = d["etas"].get<std::vector<double>>();
  c.seeds = d.value("seeds", c.seeds);
  c.dump_rollouts = d.value("dump_rollouts", c.dump_rollouts);
  if (d.contains("policy")) c.policy = policy_from_json(d["policy"]);
  if (d.contains("pipeline")) c.pipeline = pipeline_from_json(d["pipeline"]);
  if (d.contains("curriculum")) c.curriculum = curriculum_from_json(d["curriculum"]);
  return c;
}

int RunStatus::exit_code() const { return invalid_rollouts > 0 || invariant_violations > 0 ? 1 : 0; }

std::vector<NamedScene> load_scene_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("scene directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedScene> out;
  for (const fs::path& f : files) out.push_back({f.stem().string(), read_scene(f)});
  return out;
}

namespace {

std::vector<NamedScene> suite_from(const std::string& dir, const std::string& tmpl, int count, std::uint64_t seed) {
  if (!dir.empty()) return load_scene_dir(dir);
  if (tmpl == "mixed") return mixed_suite(count, seed);
  return generate_scenes(template_from_string(tmpl), count, seed);
}

TrajectoryPrior load_prior(const RunConfig& c) {
  if (!c.prior_path.empty()) return prior_from_json(read_json(c.prior_path));
  return train_default_prior(c.prior_scenes, c.prior_seed);
}

PipelineConfig pipeline_of(const RunConfig& c, const TrajectoryPrior& prior) {
  validate(c.pipeline.guidance, prior.schedule.steps());
  validate(c.policy);
  return c.pipeline;
}

std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

struct CellRecord {
  std::string scene_id;
  std::size_t seed_index = 0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  EpisodeResult result;
};

std::string batch_index_csv(std::span<const CellRecord> cells) {
  std::ostringstream os;
  os << "scenario_id,seed,eta,collided,impact_class,terminated_at\n";
  for (const CellRecord& c : cells) {
    if (c.failed || c.result.skipped) continue;
    const Rollout& r = c.result.rollout;
    os << c.scene_id << ',' << c.seed << ',' << num(c.eta) << ',' << (r.collided ? 1 : 0) << ','
       << to_string(r.impact) << ',' << r.terminated_at << '\n';
  }
  return os.str();
}

void count_rollout(RunStatus& st, const Rollout& r, const std::string& where) {
  if (r.invalid) {
    ++st.invalid_rollouts;
    st.messages.push_back("invalid rollout: " + where);
  }
}

}  // namespace

RunStatus cmd_gen_scenes(const RunConfig& c) {
  RunStatus st;
  const fs::path dir = fs::path(c.out) / "scenes";
  fs::create_directories(dir);
  std::vector<NamedScene> scenes;
  if (c.scene_template == "mixed") {
    scenes = mixed_suite(c.scene_count, c.seed);
  } else {
    std::vector<int> skipped;
    scenes = generate_scenes(template_from_string(c.scene_template), c.scene_count, c.seed, {}, &skipped);
    for (int j : skipped) st.messages.push_back("warning: no valid placement for scene " + std::to_string(j));
  }
  for (const NamedScene& s : scenes) write_scene(dir / (s.id + ".json"), s.scene);
  return st;
}

RunStatus cmd_fit_prior(const RunConfig& c) {
  RunStatus st;
  GmmFitReport rep;
  const TrajectoryPrior prior = train_default_prior(c.prior_scenes, c.prior_seed, {}, &rep);
  write_json(fs::path(c.out) / "prior.json", prior_to_json(prior));
  write_json(fs::path(c.out) / "fit_report.json",
             {{"iterations", rep.iterations}, {"log_likelihood", rep.log_likelihood}});
  return st;
}

RunStatus cmd_synthesize(const RunConfig& c) {
  RunStatus st;
  NamedScene scene;
  if (!c.scene_file.empty()) {
    scene = {fs::path(c.scene_file).stem().string(), read_scene(c.scene_file)};
  } else {
    const auto suite = suite_from(c.scenes_dir, c.scene_template, std::max(1, c.scene_count), c.suite_seed);
    if (suite.empty()) throw Error("synthesize: no scene");
    scene = suite.front();
  }
  const TrajectoryPrior prior = load_prior(c);
  const PipelineConfig p = pipeline_of(c, prior);
  const double eta = c.etas.empty() ? 0.0 : c.etas.front();
  const fs::path out(c.out);
  fs::create_directories(out);

  const ReferenceRun ref = run_reference(scene.scene, prior, c.policy, p, c.seed);
  write_text(out / "graphs.csv", graphs_csv(build_graphs(ref.rollout.frames, p.risk)));
  write_text(out / "scores.csv", scores_csv(ref.scores));
  const Targets t = select_targets(scene.scene, prior, ref, p, c.seed);
  const EpisodeResult r = adversarial_episode(scene, prior, c.policy, p, ref, t, eta, c.seed);
  if (r.skipped) {
    st.messages.push_back("skipped: " + r.skip_reason);
    write_json(out / "skipped.json", {{"scene", scene.id}, {"reason", r.skip_reason}});
    return st;
  }
  GuidanceConfig g = p.guidance;
  g.eta = eta;
  write_json(out / "skeleton.json",
             skeleton_to_json(t.skeleton, g.anchor_index(prior.schedule.steps()), t.mask));
  write_json(out / "synthesis.json", synthesis_to_json(r.synth, g));
  write_json(out / "rollout.json", rollout_to_json(r.rollout));
  const Rollout batch[1] = {r.rollout};
  write_json(out / "metrics.json", report_to_json(evaluate(batch)));
  count_rollout(st, r.rollout, scene.id);
  return st;
}

RunStatus cmd_sweep(const RunConfig& c) {
  RunStatus st;
  if (c.seeds < 1) throw Error("sweep: need at least one seed");
  if (c.etas.empty()) throw Error("sweep: need at least one eta");
  const auto scenes = suite_from(c.scenes_dir, c.scene_template, c.scene_count, c.suite_seed);
  if (scenes.empty()) throw Error("sweep: need at least one scene");
  const TrajectoryPrior prior = load_prior(c);
  const PipelineConfig p = pipeline_of(c, prior);
  const std::size_t S = static_cast<std::size_t>(c.seeds);
  const std::size_t E = c.etas.size();

  std::vector<CellRecord> cells(scenes.size() * S * E);
  parallel_for(scenes.size() * S, c.workers, [&](std::size_t task) {
    const std::size_t j = task / S;
    const std::size_t s = task % S;
    const std::uint64_t seed = cell_seed(c.seed, j, s);
    for (std::size_t e = 0; e < E; ++e) {
      CellRecord& cell = cells[task * E + e];
      cell.scene_id = scenes[j].id;
      cell.seed_index = s;
      cell.eta = c.etas[e];
      cell.seed = seed;
    }
    try {
      const ReferenceRun ref = run_reference(scenes[j].scene, prior, c.policy, p, seed);
      const Targets t = select_targets(scenes[j].scene, prior, ref, p, seed);
      for (std::size_t e = 0; e < E; ++e) {
        CellRecord& cell = cells[task * E + e];
        try {
          cell.result = adversarial_episode(scenes[j], prior, c.policy, p, ref, t, c.etas[e], seed);
        } catch (const Error& err) {
          cell.failed = true;
          cell.error = err.what();
        }
      }
    } catch (const Error& err) {
      for (std::size_t e = 0; e < E; ++e) {
        cells[task * E + e].failed = true;
        cells[task * E + e].error = err.what();
      }
    }
  });

  const KinematicSamples ref_kin = reference_kinematics(scenes, mix_seed(c.seed, 0x4ea1ULL));
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ostringstream sweep, cfr, kl;
  sweep << "row,scene,eta,seed_index,seed,status,collided,impact,kl,min_dtc,ttc_cost,m_acc,offroad,episodes,cfr,"
           "aor,real\n";
  cfr << "eta,cfr,stderr,episodes\n";
  kl << "eta,kl_mean,kl_stderr,episodes\n";
  nlohmann::json summary = nlohmann::json::array();
  for (const CellRecord& cell : cells) {
    sweep << "cell," << cell.scene_id << ',' << num(cell.eta) << ',' << cell.seed_index << ',' << cell.seed << ',';
    if (cell.failed) {
      ++st.failed_cells;
      ++st.invariant_violations;
      st.messages.push_back("cell " + cell.scene_id + " seed " + std::to_string(cell.seed_index) + ": " + cell.error);
      sweep << "failed,,,,,,,,,,,\n";
      continue;
    }
    const EpisodeResult& r = cell.result;
    if (r.skipped) {
      ++st.skipped_cells;
      sweep << "skipped,,,,,,,,,,,\n";
      continue;
    }
    count_rollout(st, r.rollout, cell.scene_id);
    sweep << "ok," << (r.rollout.collided ? 1 : 0) << ',' << to_string(r.rollout.impact) << ',' << num(r.kl) << ','
          << num(episode_min_dtc(r.rollout)) << ',' << num(episode_ttc_cost(r.rollout)) << ','
          << num(episode_mean_abs_accel(r.rollout)) << ',' << (episode_offroad(r.rollout) ? 1 : 0) << ",,,,\n";
  }
  for (double eta : c.etas) {
    std::vector<Rollout> batch;
    std::vector<double> kls;
    for (const CellRecord& cell : cells) {
      if (cell.eta != eta || cell.failed || cell.result.skipped) continue;
      batch.push_back(cell.result.rollout);
      kls.push_back(cell.result.kl);
    }
    const double n = static_cast<double>(batch.size());
    MetricsReport m;
    double kl_mean = 0.0, kl_se = 0.0;
    if (!batch.empty()) {
      m = evaluate(batch, &ref_kin);
      for (double v : kls) kl_mean += v / n;
      double var = 0.0;
      for (double v : kls) var += (v - kl_mean) * (v - kl_mean);
      kl_se = n > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
    }
    const double cfr_se = n > 0 ? std::sqrt(m.cfr * (1.0 - m.cfr) / n) : 0.0;
    sweep << "aggregate,*," << num(eta) << ",,,,," << ',' << num(kl_mean) << ',' << num(m.min_dtc) << ','
          << num(m.ttc_cost) << ',' << num(m.m_acc) << ",," << batch.size() << ',' << num(m.cfr) << ','
          << num(m.aor) << ',' << (m.real ? num(*m.real) : "") << '\n';
    cfr << num(eta) << ',' << num(m.cfr) << ',' << num(cfr_se) << ',' << batch.size() << '\n';
    kl << num(eta) << ',' << num(kl_mean) << ',' << num(kl_se) << ',' << batch.size() << '\n';
    nlohmann::json row = report_to_json(m);
    row["eta"] = eta;
    row["kl_mean"] = kl_mean;
    summary.push_back(row);
  }
  write_text(out / "sweep.csv", sweep.str());
  write_text(out / "cfr_vs_eta.csv", cfr.str());
  write_text(out / "kl_vs_eta.csv", kl.str());
  write_text(out / "batch_index.csv", batch_index_csv(cells));
  write_json(out / "metrics.json", summary);
  if (c.dump_rollouts) {
    fs::create_directories(out / "rollouts");
    for (const CellRecord& cell : cells) {
      if (cell.failed || cell.result.skipped) continue;
      std::ostringstream name;
      name << cell.scene_id << "_s" << cell.seed_index << "_eta" << num(cell.eta) << ".json";
      write_json(out / "rollouts" / name.str(), rollout_to_json(cell.result.rollout));
    }
  }
  return st;
}

RunStatus cmd_curriculum(const RunConfig& c) {
  RunStatus st;
  const auto tuning = suite_from(c.scenes_dir, c.scene_template, c.scene_count, c.suite_seed);
  auto test = suite_from(c.test_scenes_dir, c.scene_template, c.test_count, c.test_suite_seed);
  if (c.test_scenes_dir.empty()) {
    for (NamedScene& s : test) s.id = "heldout-" + s.id;
  }
  if (tuning.empty() || test.empty()) throw Error("curriculum: both splits need scenes");
  const TrajectoryPrior prior = load_prior(c);
  CurriculumConfig cc = c.curriculum;
  cc.pipeline = pipeline_of(c, prior);
  cc.seed = c.seed;
  cc.workers = c.workers;
  const CurriculumResult res = run_curriculum(cc, tuning, test, prior, c.policy);

  const fs::path out(c.out);
  fs::create_directories(out);
  write_text(out / "gain_table.csv", gain_table_csv(res.gains));
  write_json(out / "policy_initial.json", policy_to_json(res.initial));
  write_json(out / "policy_final.json", policy_to_json(res.final_policy));

  std::ostringstream rounds, buffer, updates, access;
  rounds << "round,eta,skipped," << report_csv_header() << '\n';
  buffer << "round,scenario_id,seed,collided,impact_class,terminated_at\n";
  updates << "round,incumbent_objective,objective,improved,invalid_candidates,policy\n";
  for (std::size_t r = 0; r < res.rounds.size(); ++r) {
    const RoundResult& rr = res.rounds[r];
    rounds << r << ',' << num(rr.eta) << ',' << rr.skipped << ',' << report_csv_row(rr.report) << '\n';
    for (const BufferEntry& e : rr.buffer.entries) {
      count_rollout(st, e.rollout, e.scene_id);
      buffer << e.round << ',' << e.scene_id << ',' << e.seed << ',' << (e.rollout.collided ? 1 : 0) << ','
             << to_string(e.rollout.impact) << ',' << e.rollout.terminated_at << '\n';
    }
    const UpdateResult& u = res.updates[r];
    std::string vec;
    for (double v : u.policy.vector()) vec += (vec.empty() ? "" : " ") + num(v);
    updates << r << ',' << num(u.incumbent_objective) << ',' << num(u.objective) << ',' << (u.improved ? 1 : 0)
            << ',' << u.invalid_candidates << ',' << vec << '\n';
  }
  access << "phase,split,scene_id\n";
  for (const AccessRecord& a : res.access_log) access << a.phase << ',' << a.split << ',' << a.scene_id << '\n';
  write_text(out / "rounds.csv", rounds.str());
  write_text(out / "buffer_index.csv", buffer.str());
  write_text(out / "updates.csv", updates.str());
  write_text(out / "access_log.csv", access.str());
  return st;
}

RunStatus run_command(const RunConfig& c) {
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "config.json", run_config_to_json(c));
  RunStatus st;
  try {
    if (c.command == "gen-scenes") {
      st = cmd_gen_scenes(c);
    } else if (c.command == "fit-prior") {
      st = cmd_fit_prior(c);
    } else if (c.command == "synthesize") {
      st = cmd_synthesize(c);
    } else if (c.command == "sweep") {
      st = cmd_sweep(c);
    } else if (c.command == "curriculum") {
      st = cmd_curriculum(c);
    } else {
      throw Error("unknown command '" + c.command + "'");
    }
  } catch (const Error& e) {
    ++st.invariant_violations;
    st.messages.push_back(std::string("error: ") + e.what());
  }
  return st;
}

}  // namespace scenforge
