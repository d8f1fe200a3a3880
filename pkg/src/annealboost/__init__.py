"""annealboost: simulated-annealing hyperparameter tuning for native
gradient-boosted trees, with the preprocessing, feature-selection, and
evaluation pipeline around it."""

from .errors import AnnealBoostError, ConfigError, InputError
from .paramspace import Candidate, ParameterSpec, clamp, init_candidate, neighbor
from .tuner import (
    AnnealState,
    AsaConfig,
    Objective,
    SaConfig,
    TuneTrace,
    acceptance_probability,
    asa_step,
    run_anneal,
    run_grid,
    sa_step,
)

__version__ = "0.1.0"
