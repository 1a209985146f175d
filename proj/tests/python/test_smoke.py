import json
import math

import pytest

import scenforge


@pytest.fixture(scope="module")
def prior():
    return scenforge.train_prior(scenes=30, seed=3)


def test_generate_scenes_deterministic():
    a = scenforge.generate_scenes("merge", 3, 7)
    b = scenforge.generate_scenes("merge", 3, 7)
    assert a == b
    assert len(a) == 3
    sid, scene = a[0]
    assert sid.startswith("merge_")
    assert sum(1 for ag in scene["agents"] if ag["is_ego"]) == 1


def test_idm_hand_value():
    acc = scenforge.idm_accel(10.0, 20.0, 0.0, v0=15.0, T_h=1.5, s0=2.0, a=2.0, b=2.0)
    expected = 2.0 * (1.0 - (10.0 / 15.0) ** 4 - (17.0 / 20.0) ** 2)
    assert acc == pytest.approx(expected, abs=1e-12)


def test_ttc_head_on_gap():
    ego = {"x": 0.0, "y": 0.0, "heading": 0.0, "speed": 10.0, "length": 4.0}
    lead = {"x": 20.0, "y": 0.0, "heading": 0.0, "speed": 0.0, "length": 4.0}
    assert scenforge.ttc_surrogate(ego, lead, 5.0) == pytest.approx(1.6, abs=1e-12)


def test_wasserstein_identical_is_zero():
    assert scenforge.wasserstein1([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0


def test_prior_round_trip(prior):
    again = scenforge.Prior.from_json(prior.to_json())
    assert again.to_json() == prior.to_json()
    assert prior.components > 0


def test_episode_is_reproducible(prior):
    _, scene = scenforge.generate_scenes("straight-2lane", 1, 5)[0]
    a = scenforge.run_episode(scene, prior, 2.0, 42)
    b = scenforge.run_episode(scene, prior, 2.0, 42)
    assert a == b
    if not a["skipped"]:
        assert math.isfinite(a["kl"]) and a["kl"] >= 0.0
        assert not a["invalid"]


def test_sweep_cell_count(prior):
    scenes = [s for _, s in scenforge.generate_scenes("mixed", 2, 9)]
    cells = scenforge.sweep(scenes, prior, [0.0, 1.0], 2, seed=4)
    assert len(cells) == 2 * 2 * 2


def test_invalid_scene_raises(prior):
    with pytest.raises(scenforge.ScenforgeError):
        scenforge.run_episode(json.dumps({"map": {"lanes": []}, "agents": []}), prior, 1.0, 1)


def test_run_command_gen_scenes(tmp_path):
    code, messages = scenforge.run_command(
        {"command": "gen-scenes", "seed": 2, "out": str(tmp_path), "scenes": {"template": "merge", "count": 2}}
    )
    assert code == 0, messages
    assert sorted(p.name for p in (tmp_path / "scenes").iterdir()) == ["merge_0000.json", "merge_0001.json"]
    assert (tmp_path / "config.json").exists()
