"""Closed-form benchmark objectives for validating the tuners.

Each objective maps candidates over a unit-box space to a fitness in [0, 1]
with a known optimum, so annealer behavior can be checked before spending
compute on model training: a smooth bowl with a unique optimum, a rippled
multimodal bowl, and a stepped plateau full of equal-fitness neighbors.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .paramspace import FLOAT, Candidate, ParameterSpec, make_spec

OBJECTIVE_NAMES = ("sphere", "multimodal", "plateau")

# fixed optimum, asymmetric so it never sits on a grid line by accident
_CENTERS = (0.35, 0.7, 0.55, 0.25, 0.8)


def benchmark_space(n_params: int = 2, perturb_sd: float = 0.1) -> list[ParameterSpec]:
    """Unit-box float space with a step size small enough to anneal, not jump."""
    return [
        make_spec(f"x{j}", FLOAT, 0.0, 1.0, perturb_sd=perturb_sd)
        for j in range(n_params)
    ]


def _center(n_params: int) -> np.ndarray:
    return np.asarray([_CENTERS[j % len(_CENTERS)] for j in range(n_params)])


def _vector(cand: Candidate, n_params: int) -> np.ndarray:
    return np.asarray([cand.values[f"x{j}"] for j in range(n_params)])


def sphere(n_params: int = 2):
    """Smooth bowl: fitness 1 at the center, scaled so the box minimum is 0."""
    c = _center(n_params)
    worst = float(np.sum(np.maximum(c, 1.0 - c) ** 2))

    def evaluate(cand: Candidate) -> float:
        x = _vector(cand, n_params)
        return 1.0 - float(np.sum((x - c) ** 2)) / worst

    return evaluate


def multimodal(n_params: int = 2, amplitude: float = 0.08, waves: int = 4):
    """Rippled bowl: cosine bumps carve local optima around the global one."""
    c = _center(n_params)
    worst = float(np.sum(np.maximum(c, 1.0 - c) ** 2) + 2.0 * amplitude * n_params)

    def evaluate(cand: Candidate) -> float:
        x = _vector(cand, n_params)
        d = x - c
        r = np.sum(d * d) + amplitude * np.sum(1.0 - np.cos(2.0 * np.pi * waves * d))
        return 1.0 - float(r) / worst

    return evaluate


def plateau(n_params: int = 2, levels: int = 5):
    """Staircase toward the center; within a step every move is fitness-neutral."""
    c = _center(n_params)

    def evaluate(cand: Candidate) -> float:
        x = _vector(cand, n_params)
        t = np.clip(1.0 - np.abs(x - c), 0.0, 1.0)
        return float(np.mean(np.floor(t * levels) / levels))

    return evaluate


def make_objective(name: str, n_params: int = 2):
    """Objective factory plus its best reachable fitness.

    The plateau's exact optimum is a measure-zero point, so its reachable
    best is the top step's value.
    """
    if name == "sphere":
        return sphere(n_params), 1.0
    if name == "multimodal":
        return multimodal(n_params), 1.0
    if name == "plateau":
        levels = 5
        return plateau(n_params, levels=levels), (levels - 1) / levels
    raise ConfigError(f"unknown benchmark objective {name!r}")
