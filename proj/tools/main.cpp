#include "scenforge/cli.hpp"
#include "scenforge/scene_io.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <sstream>

using namespace scenforge;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw Error("bad number in list: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// Evenly spaced schedule from 0.5 to 2.0 (a single round runs at 1.0).
std::vector<double> default_schedule(int rounds) {
  std::vector<double> out;
  for (int r = 0; r < rounds; ++r) out.push_back(rounds == 1 ? 1.0 : 0.5 + 1.5 * r / (rounds - 1));
  return out;
}

struct Flags {
  std::string config, scenes, test_scenes, scene, tmpl, eta, curriculum_eta, policy, prior, out, selection;
  int count = 0, seeds = 0, rounds = 0, k_top = 0, workers = 0, prior_scenes = 0, eval_seeds = 0,
      seeds_per_scene = 0;
  std::uint64_t seed = 0, suite_seed = 0;
  double alpha = 0, anchor_frac = 0, w_adv = 0;
  bool no_anchor = false, dump_rollouts = false;
};

// Registers the shared flags; each can also be set through SCENFORGE_<NAME>.
std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> add_flags(CLI::App* app, Flags& f) {
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> opts;
  auto add = [&](CLI::Option* o, const char* env, std::function<void(RunConfig&)> apply) {
    o->envname(std::string("SCENFORGE_") + env);
    opts.emplace_back(o, std::move(apply));
  };
  add(app->add_option("--scenes", f.scenes, "directory of scene JSONs (tuning split for curriculum)"), "SCENES",
      [&](RunConfig& c) { c.scenes_dir = std::filesystem::absolute(f.scenes).string(); });
  add(app->add_option("--test-scenes", f.test_scenes, "held-out scene directory"), "TEST_SCENES",
      [&](RunConfig& c) { c.test_scenes_dir = std::filesystem::absolute(f.test_scenes).string(); });
  add(app->add_option("--scene", f.scene, "single scene file"), "SCENE",
      [&](RunConfig& c) { c.scene_file = std::filesystem::absolute(f.scene).string(); });
  add(app->add_option("--template", f.tmpl, "straight-2lane, merge, 4way-intersection or mixed"), "TEMPLATE",
      [&](RunConfig& c) { c.scene_template = f.tmpl; });
  add(app->add_option("--count", f.count, "number of scenes"), "COUNT", [&](RunConfig& c) { c.scene_count = f.count; });
  add(app->add_option("--suite-seed", f.suite_seed, "seed of the generated suite"), "SUITE_SEED",
      [&](RunConfig& c) { c.suite_seed = f.suite_seed; });
  add(app->add_option("--eta", f.eta, "comma-separated intensities"), "ETA",
      [&](RunConfig& c) { c.etas = parse_list(f.eta); });
  add(app->add_option("--seeds", f.seeds, "seeds per scene"), "SEEDS", [&](RunConfig& c) { c.seeds = f.seeds; });
  add(app->add_option("--policy", f.policy, "idm or lane_graph"), "POLICY",
      [&](RunConfig& c) { c.policy.kind = policy_kind_from_string(f.policy); });
  add(app->add_option("--rounds", f.rounds, "curriculum rounds"), "ROUNDS", [&](RunConfig& c) {
    c.curriculum.rounds = f.rounds;
    if (static_cast<int>(c.curriculum.etas.size()) != f.rounds) c.curriculum.etas = default_schedule(f.rounds);
  });
  add(app->add_option("--curriculum-eta", f.curriculum_eta, "comma-separated per-round intensities"),
      "CURRICULUM_ETA", [&](RunConfig& c) { c.curriculum.etas = parse_list(f.curriculum_eta); });
  add(app->add_option("--eval-seeds", f.eval_seeds, "evaluation seeds per scene"), "EVAL_SEEDS",
      [&](RunConfig& c) { c.curriculum.eval_seeds = f.eval_seeds; });
  add(app->add_option("--seeds-per-scene", f.seeds_per_scene, "curriculum seeds per scene and round"),
      "SEEDS_PER_SCENE", [&](RunConfig& c) { c.curriculum.seeds_per_scene = f.seeds_per_scene; });
  add(app->add_option("--k-top", f.k_top, "size of the candidate set"), "K_TOP",
      [&](RunConfig& c) { c.pipeline.risk.k_top = f.k_top; });
  add(app->add_option("--alpha", f.alpha, "anchoring blend weight"), "ALPHA",
      [&](RunConfig& c) { c.pipeline.guidance.alpha = f.alpha; });
  add(app->add_option("--anchor-frac", f.anchor_frac, "anchor index as a fraction of K"), "ANCHOR_FRAC",
      [&](RunConfig& c) { c.pipeline.guidance.anchor_frac = f.anchor_frac; });
  add(app->add_option("--w-adv", f.w_adv, "adversarial potential weight"), "W_ADV",
      [&](RunConfig& c) { c.pipeline.guidance.w_adv = f.w_adv; });
  add(app->add_option("--selection", f.selection, "topo_feas, topo_only or random_k"), "SELECTION",
      [&](RunConfig& c) { c.pipeline.selection = support_selection_from_string(f.selection); });
  add(app->add_flag("--no-anchor", f.no_anchor, "disable topological anchoring"), "NO_ANCHOR",
      [&](RunConfig& c) { c.pipeline.guidance.anchoring = !f.no_anchor; });
  add(app->add_flag("--dump-rollouts", f.dump_rollouts, "write one rollout JSON per cell"), "DUMP_ROLLOUTS",
      [&](RunConfig& c) { c.dump_rollouts = f.dump_rollouts; });
  add(app->add_option("--workers", f.workers, "worker threads"), "WORKERS",
      [&](RunConfig& c) { c.workers = f.workers; });
  add(app->add_option("--seed", f.seed, "global seed"), "SEED", [&](RunConfig& c) { c.seed = f.seed; });
  add(app->add_option("--prior", f.prior, "fitted prior JSON"), "PRIOR",
      [&](RunConfig& c) { c.prior_path = std::filesystem::absolute(f.prior).string(); });
  add(app->add_option("--prior-scenes", f.prior_scenes, "scenes used to fit the prior"), "PRIOR_SCENES",
      [&](RunConfig& c) { c.prior_scenes = f.prior_scenes; });
  add(app->add_option("--out", f.out, "output directory"), "OUT", [&](RunConfig& c) { c.out = f.out; });
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial driving scenario synthesis"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-scenes", "write a generated scene suite"},
      {"fit-prior", "fit the trajectory prior and save it"},
      {"synthesize", "one adversarial episode per eta on a single scene"},
      {"sweep", "metrics over scenes x seeds x eta"},
      {"curriculum", "alternate synthesis rounds and ego updates"},
      {"run", "re-run a config snapshot"}};
  std::map<std::string, std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>>> options;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "config snapshot to start from")->envname("SCENFORGE_CONFIG");
    if (name == "run") sub->get_option("--config")->required();
    options[name] = add_flags(sub, flags);
    subs[name] = sub;
  }
  CLI11_PARSE(app, argc, argv);

  try {
    std::string name;
    for (const auto& [n, sub] : subs) {
      if (sub->parsed()) name = n;
    }
    RunConfig cfg;
    if (!flags.config.empty()) cfg = run_config_from_json(read_json(flags.config));
    if (name != "run") cfg.command = name;
    for (auto& [opt, apply] : options[name]) {
      if (opt->count() > 0) apply(cfg);
    }
    const RunStatus st = run_command(cfg);
    for (const std::string& m : st.messages) std::cerr << m << '\n';
    if (st.skipped_cells > 0) std::cerr << st.skipped_cells << " cells skipped\n";
    return st.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
