"""Adversarial driving scenario synthesis."""

import json

from . import _core
from ._core import Prior, ScenforgeError, idm_accel, ttc_surrogate, wasserstein1

__all__ = [
    "Prior",
    "ScenforgeError",
    "generate_scenes",
    "idm_accel",
    "run_command",
    "run_episode",
    "sweep",
    "train_prior",
    "ttc_surrogate",
    "wasserstein1",
]


def train_prior(scenes=150, seed=11):
    return _core.train_prior(scenes, seed)


def generate_scenes(template, count, seed):
    """Returns a list of (scene id, scene dict)."""
    return [(sid, json.loads(doc)) for sid, doc in _core.generate_scenes(template, count, seed)]


def _dump(doc):
    if doc is None:
        return ""
    return doc if isinstance(doc, str) else json.dumps(doc)


def run_episode(scene, prior, eta, seed, policy=None, pipeline=None):
    return json.loads(_core.run_episode(_dump(scene), prior, eta, seed, _dump(policy), _dump(pipeline)))


def sweep(scenes, prior, etas, seeds, seed=1, pipeline=None, workers=1):
    cells = _core.sweep([_dump(s) for s in scenes], prior, list(etas), seeds, seed, _dump(pipeline), workers)
    return [json.loads(c) for c in cells]


def run_command(config):
    """Runs a CLI command described by a config dict; returns (exit code, messages)."""
    return _core.run_command(_dump(config))
