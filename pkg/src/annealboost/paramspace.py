"""Tunable hyperparameter spaces: candidate generation, perturbation, repair.

A search space is a list of :class:`ParameterSpec`. Candidates are immutable
value objects mapping parameter names to floats (integer-kind parameters hold
whole-number floats). All randomness comes from an explicit
``numpy.random.Generator`` so parallel callers can use independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError

INTEGER = "integer"
FLOAT = "float"

# Repair value for float parameters pushed below a non-positive lower bound
# (open-at-zero ranges like a learning rate must not collapse to 0).
EPSILON_FLOOR = 0.001


def _round_half_away(x: float) -> float:
    # round-half-away-from-zero; builtin round() is banker's rounding
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


@dataclass(frozen=True)
class ParameterSpec:
    """Definition of one tunable parameter.

    ``lower``/``upper`` are the hard bounds enforced by :func:`clamp`;
    ``init_lower``/``init_upper`` bound the uniform initial draw and must sit
    inside the hard bounds. ``perturb_sd`` is the standard deviation of the
    Gaussian neighborhood step.
    """

    name: str
    kind: str
    lower: float
    upper: float
    init_lower: float
    init_upper: float
    perturb_sd: float

    def __post_init__(self) -> None:
        if self.kind not in (INTEGER, FLOAT):
            raise ConfigError(f"parameter {self.name!r}: unknown kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ConfigError(
                f"parameter {self.name!r}: lower bound {self.lower} must be "
                f"strictly below upper bound {self.upper}"
            )
        if self.init_lower < self.lower or self.init_upper > self.upper:
            raise ConfigError(
                f"parameter {self.name!r}: init range [{self.init_lower}, "
                f"{self.init_upper}] is not contained in [{self.lower}, {self.upper}]"
            )
        if self.init_lower > self.init_upper:
            raise ConfigError(f"parameter {self.name!r}: empty init range")
        if not self.perturb_sd > 0:
            raise ConfigError(f"parameter {self.name!r}: perturb_sd must be > 0")
        if self.kind == INTEGER:
            for label, v in (("lower", self.lower), ("upper", self.upper)):
                if math.isfinite(v) and v != int(v):
                    raise ConfigError(
                        f"parameter {self.name!r}: integer kind requires whole "
                        f"{label} bound, got {v}"
                    )


def default_perturb_sd(lower: float, upper: float) -> float:
    """Default step size: 1 for unit-interval parameters, 2 for wider ranges."""
    return 1.0 if (lower >= 0.0 and upper <= 1.0) else 2.0


def make_spec(
    name: str,
    kind: str,
    lower: float,
    upper: float,
    init_lower: Optional[float] = None,
    init_upper: Optional[float] = None,
    perturb_sd: Optional[float] = None,
) -> ParameterSpec:
    """Build a ParameterSpec, filling init range and step-size defaults."""
    if perturb_sd is None:
        perturb_sd = default_perturb_sd(lower, upper)
    return ParameterSpec(
        name=name,
        kind=kind,
        lower=lower,
        upper=upper,
        init_lower=lower if init_lower is None else init_lower,
        init_upper=upper if init_upper is None else init_upper,
        perturb_sd=perturb_sd,
    )


@dataclass(frozen=True)
class Candidate:
    """One concrete assignment of values to every parameter in a space.

    ``fitness`` is the objective value in [0, 1] once evaluated, else None.
    Treat instances as immutable; operations return new candidates.
    """

    values: Mapping[str, float]
    fitness: Optional[float] = None

    def with_fitness(self, fitness: float) -> "Candidate":
        return replace(self, fitness=fitness)

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def _repair_value(value: float, spec: ParameterSpec) -> float:
    if spec.kind == INTEGER:
        value = _round_half_away(value)
        # integer bounds are whole, so plain bound clamping keeps wholeness
        return float(min(max(value, spec.lower), spec.upper))
    if value > spec.upper:
        return spec.upper
    if value < spec.lower:
        return spec.lower if spec.lower > 0 else EPSILON_FLOOR
    return value


def clamp(cand: Candidate, space: Sequence[ParameterSpec]) -> Candidate:
    """Repair out-of-bound values by pulling them to the designated limits.

    Values above the upper bound become the upper bound. Values below the
    lower bound become the lower bound when it is positive, else the
    epsilon floor (0.001). Integer parameters are rounded half-away-from-zero
    before the bound check.
    """
    repaired = {s.name: _repair_value(cand.values[s.name], s) for s in space}
    return Candidate(values=repaired, fitness=cand.fitness)


def init_candidate(space: Sequence[ParameterSpec], rng: np.random.Generator) -> Candidate:
    """Draw an initial candidate uniformly from each parameter's init range."""
    if not space:
        raise ConfigError("parameter space is empty")
    values = {}
    for s in space:
        v = rng.uniform(s.init_lower, s.init_upper)
        values[s.name] = v
    return clamp(Candidate(values=values), space)


def neighbor(cur: Candidate, space: Sequence[ParameterSpec], rng: np.random.Generator) -> Candidate:
    """Gaussian perturbation of every parameter, then bound repair."""
    values = {}
    for s in space:
        values[s.name] = cur.values[s.name] + rng.normal(0.0, s.perturb_sd)
    return clamp(Candidate(values=values), space)


def gbt_space() -> list[ParameterSpec]:
    """Eight-parameter search space for the native boosted-tree learner.

    Integer parameters start from small values (init upper 10) and floats
    with wide ranges start below 2, so initial models stay cheap; the hard
    bounds span the full experimental ranges.
    """
    return [
        make_spec("n_estimators", INTEGER, 1, 50, init_upper=10),
        make_spec("max_depth", INTEGER, 1, 50, init_upper=10),
        make_spec("max_delta_step", INTEGER, 1, 50, init_upper=10),
        make_spec("n_parallel_trees", INTEGER, 1, 50, init_upper=10),
        make_spec("learning_rate", FLOAT, 0.0, 1.0, init_lower=EPSILON_FLOOR),
        make_spec("l1_reg", FLOAT, 0.0, 1.0),
        make_spec("l2_reg", FLOAT, 0.0, 1.0),
        make_spec("gamma", FLOAT, 0.0, 50.0, init_lower=EPSILON_FLOOR, init_upper=2.0),
    ]


def cab_space() -> list[ParameterSpec]:
    """Five-parameter search space for the categorical-boosting variant."""
    return [
        make_spec("learning_rate", FLOAT, 0.0, 1.0, init_lower=EPSILON_FLOOR),
        make_spec("random_strength", FLOAT, 0.0, 1.0),
        make_spec("bagging_temperature", FLOAT, 0.0, 1.0),
        make_spec("tree_depth", INTEGER, 1, 16, init_upper=8),
        make_spec("l2_reg", FLOAT, 0.0, 14.0, init_upper=2.0),
    ]
