"""Capacity-constrained treatment allocation for a dynamic population."""

from importlib import resources
from pathlib import Path

from .adp import (
    BiasWeights,
    CandidateSet,
    adjusted_impactability,
    delta_t,
    duality_gap_check,
    impactability,
    mortality_threshold,
    row_generation,
    solve_bias_weights,
)
from .dynamics import find_invariant, transition, uncontrolled_step
from .measures import AtomicMeasure, PopulationState, combine, expectation, mass, radon_nikodym, total_variation
from .model import ModelSpec, expected_basis_next, gen_synthetic, load_spec, transition_distribution, y_lambda
from .policies import SelectionResult, adp_policy, myopic_policy, select, uniform_threshold
from .sim import SimConfig, compare_horizons, paired_compare, run_episode
from .stats import t_cdf

__version__ = "0.1.0"

BUILTIN_SPECS = ("small", "delayed_benefit")


def builtin_spec_path(name: str) -> Path:
    """Path of a shipped example spec (``small`` or ``delayed_benefit``)."""
    if name not in BUILTIN_SPECS:
        raise ValueError(f"unknown builtin spec {name!r}; choose from {BUILTIN_SPECS}")
    return Path(str(resources.files(__package__) / "data" / f"{name}.json"))
