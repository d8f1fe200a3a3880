"""Annealing and grid-search drivers over a pluggable objective.

Both annealers maximize an objective in [0, 1]. Classic annealing cools a
temperature geometrically per iteration; the adaptive variant derives its
temperature from the running count of consecutive worsening moves, so it can
reheat itself out of a local maximum. Every move is recorded in a
:class:`TuneTrace` for convergence plots and replay checks.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import AnnealBoostError, ConfigError, InputError
from .paramspace import Candidate, ParameterSpec, init_candidate, neighbor

SA = "sa"
ASA = "asa"


@dataclass(frozen=True)
class Objective:
    """Wraps an evaluation function Candidate -> fitness in [0, 1]."""

    evaluate: Callable[[Candidate], float]
    deterministic: bool = True


ObjectiveLike = Union[Objective, Callable[[Candidate], float]]


def as_objective(obj: ObjectiveLike) -> Objective:
    if isinstance(obj, Objective):
        return obj
    return Objective(evaluate=obj)


@dataclass(frozen=True)
class SaConfig:
    max_iters: int
    initial_temp: float = 1000.0
    cooling_rate: float = 0.8
    moves_per_iter: int = 8

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if not self.initial_temp > 0:
            raise ConfigError("initial_temp must be > 0")
        if not 0 < self.cooling_rate < 1:
            raise ConfigError("cooling_rate must lie in (0, 1)")
        if self.moves_per_iter < 1:
            raise ConfigError("moves_per_iter must be >= 1")


@dataclass(frozen=True)
class AsaConfig:
    max_iters: int
    t_min: float = 2.0
    beta: float = 2.0
    moves_per_iter: int = 8

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if not self.t_min > 0:
            raise ConfigError("t_min must be > 0")
        if not self.beta > 0:
            raise ConfigError("beta must be > 0")
        if self.moves_per_iter < 1:
            raise ConfigError("moves_per_iter must be >= 1")


@dataclass(frozen=True)
class AnnealState:
    """Search state after some number of outer iterations.

    ``current`` may be worse than ``best``: worsening moves are accepted on
    purpose, while ``best`` never loses the incumbent.
    """

    current: Candidate
    best: Candidate
    temperature: float
    bad_moves: int
    iteration: int


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    values: Mapping[str, float]
    fitness: float
    temperature: float
    accepted: bool
    best_so_far: float
    bad_moves: Optional[int] = None


@dataclass
class TuneTrace:
    """Per-move history of one tuning run."""

    param_names: tuple[str, ...]
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        """CSV schema: iteration, temperature, accepted, fitness, best_so_far,
        then one column per parameter."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "temperature", "accepted", "fitness", "best_so_far"]
                + list(self.param_names)
            )
            for rec in self.records:
                writer.writerow(
                    [
                        rec.iteration,
                        repr(rec.temperature),
                        "true" if rec.accepted else "false",
                        repr(rec.fitness),
                        repr(rec.best_so_far),
                    ]
                    + [repr(float(rec.values[p])) for p in self.param_names]
                )


class TuningAborted(AnnealBoostError):
    """Objective evaluation failed mid-run; carries the partial trace."""

    def __init__(self, message: str, trace: TuneTrace, best: Optional[Candidate]):
        super().__init__(message)
        self.trace = trace
        self.best = best


def acceptance_probability(f_new: float, f_cur: float, temp: float) -> float:
    """Probability of accepting a move from fitness ``f_cur`` to ``f_new``.

    Worsening moves are accepted with probability exp(delta / temp) for a
    maximization objective; anything at least as good is accepted outright.
    """
    if not temp > 0:
        raise ConfigError(f"temperature must be > 0, got {temp}")
    delta = f_new - f_cur
    if delta >= 0:
        return 1.0
    return math.exp(delta / temp)


def metropolis_accept(
    f_new: float, f_cur: float, temp: float, rng: np.random.Generator
) -> bool:
    """Single accept/reject decision; draws randomness only for non-improving moves."""
    if f_new > f_cur:
        return True
    return rng.random() <= acceptance_probability(f_new, f_cur, temp)


def _evaluate(obj: Objective, cand: Candidate) -> float:
    fitness = float(obj.evaluate(cand))
    if math.isnan(fitness):
        raise InputError("objective returned NaN")
    if not 0.0 <= fitness <= 1.0:
        raise InputError(f"objective returned {fitness}, expected a value in [0, 1]")
    return fitness


def sa_step(
    state: AnnealState,
    cfg: SaConfig,
    space: Sequence[ParameterSpec],
    obj: ObjectiveLike,
    rng: np.random.Generator,
    trace: Optional[TuneTrace] = None,
) -> AnnealState:
    """One outer iteration: ``moves_per_iter`` neighbor trials at the current
    temperature, then geometric cooling. Trace rows carry the iteration's
    post-cooling temperature, so the temperature column reads as the schedule."""
    obj = as_objective(obj)
    cur, best = state.current, state.best
    decide_temp = state.temperature
    next_temp = decide_temp * cfg.cooling_rate
    iteration = state.iteration + 1
    for _ in range(cfg.moves_per_iter):
        cand = neighbor(cur, space, rng)
        fitness = _evaluate(obj, cand)
        cand = cand.with_fitness(fitness)
        accepted = metropolis_accept(fitness, cur.fitness, decide_temp, rng)
        if accepted:
            cur = cand
        if fitness > best.fitness:
            best = cand
        if trace is not None:
            trace.append(
                TraceRecord(iteration, cand.values, fitness, next_temp, accepted, best.fitness)
            )
    return AnnealState(cur, best, next_temp, state.bad_moves, iteration)


def asa_step(
    state: AnnealState,
    cfg: AsaConfig,
    space: Sequence[ParameterSpec],
    obj: ObjectiveLike,
    rng: np.random.Generator,
    trace: Optional[TuneTrace] = None,
) -> AnnealState:
    """One outer iteration of the adaptive schedule.

    Per move: the bad-move counter is updated first (reset on improvement,
    +1 on worsening, unchanged on ties), the temperature is recomputed as
    t_min + beta * ln(1 + bad_moves), and only then is the acceptance
    probability evaluated for the non-improving move.
    """
    obj = as_objective(obj)
    cur, best = state.current, state.best
    bad_moves = state.bad_moves
    temp = state.temperature
    iteration = state.iteration + 1
    for _ in range(cfg.moves_per_iter):
        cand = neighbor(cur, space, rng)
        fitness = _evaluate(obj, cand)
        cand = cand.with_fitness(fitness)
        if fitness > cur.fitness:
            bad_moves = 0
        elif fitness < cur.fitness:
            bad_moves += 1
        temp = cfg.t_min + cfg.beta * math.log1p(bad_moves)
        accepted = metropolis_accept(fitness, cur.fitness, temp, rng)
        if accepted:
            cur = cand
        if fitness > best.fitness:
            best = cand
        if trace is not None:
            trace.append(
                TraceRecord(
                    iteration, cand.values, fitness, temp, accepted, best.fitness, bad_moves
                )
            )
    return AnnealState(cur, best, temp, bad_moves, iteration)


def run_anneal(
    mode: str,
    cfg: Union[SaConfig, AsaConfig],
    space: Sequence[ParameterSpec],
    obj: ObjectiveLike,
    rng: np.random.Generator,
) -> tuple[Candidate, TuneTrace]:
    """Full annealing run: uniform init, ``cfg.max_iters`` outer iterations.

    Returns the best-ever candidate (not the final current one) and the full
    trace. If the objective raises mid-run, :class:`TuningAborted` is raised
    with the partial trace retained.
    """
    obj = as_objective(obj)
    if mode == SA:
        if not isinstance(cfg, SaConfig):
            raise ConfigError("mode 'sa' requires SaConfig")
        step = sa_step
        temp0 = cfg.initial_temp
    elif mode == ASA:
        if not isinstance(cfg, AsaConfig):
            raise ConfigError("mode 'asa' requires AsaConfig")
        step = asa_step
        temp0 = cfg.t_min
    else:
        raise ConfigError(f"unknown annealing mode {mode!r}")

    trace = TuneTrace(param_names=tuple(s.name for s in space))
    cand = init_candidate(space, rng)
    fitness = _evaluate(obj, cand)
    cand = cand.with_fitness(fitness)
    trace.append(
        TraceRecord(
            0, cand.values, fitness, temp0, True, fitness, 0 if mode == ASA else None
        )
    )
    state = AnnealState(current=cand, best=cand, temperature=temp0, bad_moves=0, iteration=0)
    for _ in range(cfg.max_iters):
        try:
            state = step(state, cfg, space, obj, rng, trace)
        except (ConfigError,):
            raise
        except Exception as exc:
            raise TuningAborted(
                f"objective failed at iteration {state.iteration + 1}: {exc}",
                trace,
                state.best,
            ) from exc
    return state.best, trace


def run_grid(
    grids: Mapping[str, Sequence[float]], obj: ObjectiveLike
) -> tuple[Candidate, TuneTrace]:
    """Exhaustive Cartesian-product search.

    Every combination is evaluated exactly once, in lexicographic enumeration
    order over the given per-parameter lists; fitness ties keep the first
    combination encountered. Trace rows mark ``accepted`` on the combinations
    that became the new incumbent.
    """
    obj = as_objective(obj)
    if not grids:
        raise ConfigError("grid search needs at least one parameter")
    for name, values in grids.items():
        if len(values) == 0:
            raise ConfigError(f"empty grid for parameter {name!r}")
    param_names = tuple(grids)
    trace = TuneTrace(param_names=param_names)
    best: Optional[Candidate] = None
    for idx, combo in enumerate(itertools.product(*grids.values())):
        cand = Candidate(values={n: float(v) for n, v in zip(param_names, combo)})
        fitness = _evaluate(obj, cand)
        cand = cand.with_fitness(fitness)
        improved = best is None or fitness > best.fitness
        if improved:
            best = cand
        trace.append(TraceRecord(idx, cand.values, fitness, 0.0, improved, best.fitness))
    return best, trace
