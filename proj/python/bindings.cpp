#include "scenforge/cli.hpp"
#include "scenforge/curriculum.hpp"
#include "scenforge/riskgraph.hpp"
#include "scenforge/scene_io.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace scenforge;
using nlohmann::json;

namespace {

json parse(const std::string& s) { return s.empty() ? json::object() : json::parse(s); }

AgentState agent_from(const py::dict& d) {
  AgentState a;
  a.position = Vec2(d["x"].cast<double>(), d["y"].cast<double>());
  a.heading = d.contains("heading") ? d["heading"].cast<double>() : 0.0;
  a.speed = d.contains("speed") ? d["speed"].cast<double>() : 0.0;
  if (d.contains("length")) a.length = d["length"].cast<double>();
  if (d.contains("width")) a.width = d["width"].cast<double>();
  return a;
}

std::string episode_summary(const EpisodeResult& r) {
  json d{{"scene", r.scene_id}, {"seed", r.seed},     {"eta", r.eta},
         {"skipped", r.skipped}, {"skip_reason", r.skip_reason}};
  if (!r.skipped) {
    d["kl"] = r.kl;
    d["collided"] = r.rollout.collided;
    d["impact"] = to_string(r.rollout.impact);
    d["terminated_at"] = r.rollout.terminated_at;
    d["invalid"] = r.rollout.invalid;
    d["min_dtc"] = episode_min_dtc(r.rollout);
    d["coalition"] = r.skeleton.coalition;
    d["anchor_applied"] = r.synth.anchor_applied;
  }
  return d.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial driving scenario synthesis core";

  py::register_exception<Error>(m, "ScenforgeError", PyExc_ValueError);

  py::class_<TrajectoryPrior>(m, "Prior")
      .def("to_json", [](const TrajectoryPrior& p) { return prior_to_json(p).dump(); })
      .def_static("from_json", [](const std::string& s) { return prior_from_json(json::parse(s)); })
      .def_property_readonly("components", [](const TrajectoryPrior& p) { return p.gmm.components().size(); })
      .def_property_readonly("diffusion_steps", [](const TrajectoryPrior& p) { return p.schedule.steps(); });

  m.def(
      "train_prior",
      [](int scenes, std::uint64_t seed) {
        py::gil_scoped_release release;
        return train_default_prior(scenes, seed);
      },
      py::arg("scenes") = 150, py::arg("seed") = 11,
      "Fit the trajectory prior on lane-following traffic over a mixed suite.");

  m.def(
      "generate_scenes",
      [](const std::string& tmpl, int count, std::uint64_t seed) {
        std::vector<std::pair<std::string, std::string>> out;
        const auto scenes = tmpl == "mixed" ? mixed_suite(count, seed)
                                            : generate_scenes(template_from_string(tmpl), count, seed);
        for (const NamedScene& s : scenes) out.emplace_back(s.id, scene_to_json(s.scene).dump());
        return out;
      },
      py::arg("template"), py::arg("count"), py::arg("seed"), "List of (id, scene JSON) pairs.");

  m.def(
      "run_episode",
      [](const std::string& scene_json, const TrajectoryPrior& prior, double eta, std::uint64_t seed,
         const std::string& policy_json, const std::string& pipeline_json) {
        const NamedScene s{"scene", scene_from_json(json::parse(scene_json))};
        const EgoPolicyParams p = policy_json.empty() ? EgoPolicyParams{} : policy_from_json(json::parse(policy_json));
        const PipelineConfig cfg = pipeline_from_json(parse(pipeline_json));
        py::gil_scoped_release release;
        return episode_summary(run_episode(s, prior, p, cfg, eta, seed));
      },
      py::arg("scene"), py::arg("prior"), py::arg("eta"), py::arg("seed"), py::arg("policy") = "",
      py::arg("pipeline") = "", "One adversarial episode; returns a JSON summary.");

  m.def(
      "sweep",
      [](const std::vector<std::string>& scenes_json, const TrajectoryPrior& prior, const std::vector<double>& etas,
         int seeds, std::uint64_t seed, const std::string& pipeline_json, int workers) {
        std::vector<NamedScene> scenes;
        for (std::size_t j = 0; j < scenes_json.size(); ++j) {
          scenes.push_back({"scene_" + std::to_string(j), scene_from_json(json::parse(scenes_json[j]))});
        }
        const PipelineConfig cfg = pipeline_from_json(parse(pipeline_json));
        std::vector<SweepCell> cells;
        {
          py::gil_scoped_release release;
          cells = run_sweep(scenes, prior, EgoPolicyParams{}, cfg, etas, seeds, seed, workers);
        }
        std::vector<std::string> out;
        for (const SweepCell& c : cells) out.push_back(episode_summary(c.result));
        return out;
      },
      py::arg("scenes"), py::arg("prior"), py::arg("etas"), py::arg("seeds"), py::arg("seed") = 1,
      py::arg("pipeline") = "", py::arg("workers") = 1, "Every (scene, seed, eta) cell as JSON summaries.");

  m.def(
      "run_command",
      [](const std::string& config_json) {
        const RunConfig cfg = run_config_from_json(json::parse(config_json));
        RunStatus st;
        {
          py::gil_scoped_release release;
          st = run_command(cfg);
        }
        return std::make_pair(st.exit_code(), st.messages);
      },
      py::arg("config"), "Run a CLI command from a config document; returns (exit code, messages).");

  m.def(
      "idm_accel",
      [](double v, double gap, double dv, double v0, double T_h, double s0, double a, double b, double b_max) {
        EgoPolicyParams p;
        p.v0 = v0;
        p.T_h = T_h;
        p.s0 = s0;
        p.a = a;
        p.b = b;
        return idm_accel(v, gap, dv, p, b_max);
      },
      py::arg("v"), py::arg("gap"), py::arg("dv"), py::arg("v0") = 13.0, py::arg("T_h") = 1.0, py::arg("s0") = 2.0,
      py::arg("a") = 1.5, py::arg("b") = 2.0, py::arg("b_max") = 8.0);

  m.def(
      "ttc_surrogate",
      [](const py::dict& a, const py::dict& b, double tau_max) {
        return ttc_surrogate(agent_from(a), agent_from(b), tau_max);
      },
      py::arg("a"), py::arg("b"), py::arg("tau_max") = 5.0);

  m.def("wasserstein1", &wasserstein1, py::arg("a"), py::arg("b"));
}
