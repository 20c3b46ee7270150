"""CATE learners whose networks can be generated by a shared hypernetwork."""

import json

import numpy as np

from ._core import (
    ConfigError,
    CounterfactualsUnavailable,
    FittedLearner,
    clip_propensity,
    pehe,
    pseudo_outcome_dr,
    pseudo_outcome_ra,
)
from . import _core

__all__ = [
    "ConfigError",
    "CounterfactualsUnavailable",
    "FittedLearner",
    "clip_propensity",
    "generate_synthetic",
    "gradcheck",
    "pehe",
    "pseudo_outcome_dr",
    "pseudo_outcome_ra",
    "run_experiment",
    "train",
]


def generate_synthetic(seed=0, **data):
    """Draw a synthetic dataset; keyword arguments are keys of the config's data section."""
    out = _core.generate_synthetic(json.dumps({"data": data}), seed)
    return {k: np.asarray(v) for k, v in out.items()}


def train(learner, x, t, y, seed=0, outcome_type="continuous", **training):
    """Fit e.g. "t_learner/hyper"; keyword arguments are keys of the config's training section."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _core.train(learner, x, list(map(int, t)), list(map(float, y)), seed, json.dumps({"training": training}),
                       outcome_type)


def run_experiment(config):
    """Run the experiment (or sweep) described by a config dict; returns one dict per run."""
    return _core.run_experiment(json.dumps(config))


def gradcheck(**options):
    return _core.gradcheck(json.dumps({"gradcheck": options}))
