"""Capacity-constrained selection: fractional knapsack over the untreated measure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adp import BiasWeights, adjusted_scores, impactability_array
from .errors import CapacityExceeded
from .measures import MASS_TOL, AtomicMeasure, PopulationState, mass
from .model import ModelSpec

# residual capacity below this is treated as exhausted
CAPACITY_DUST = 1e-15


@dataclass(frozen=True)
class SelectionResult:
    tau: AtomicMeasure
    threshold: float
    boundary_fraction: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold if math.isfinite(self.threshold) else "inf",
            "boundary_fraction": self.boundary_fraction,
            "tau": [[k, w] for k, w in self.tau.items()],
        }


def select_scored(
    eta: AtomicMeasure, rho_mass: float, capacity_ratio: float, scores: np.ndarray
) -> SelectionResult:
    """Greedy fill of the residual capacity by descending score, ties by bitstring.

    ``scores`` is aligned with ``eta.support``.  Only strictly positive scores
    are eligible; the last atom taken may be split.
    """
    if rho_mass > capacity_ratio + MASS_TOL:
        raise CapacityExceeded(f"treated mass {rho_mass!r} exceeds capacity ratio {capacity_ratio!r}")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(eta),):
        raise ValueError("scores must align with the support of eta")
    taken, threshold, fraction = greedy_fill(eta.weights, scores, max(capacity_ratio - rho_mass, 0.0))
    tau = AtomicMeasure(zip(eta.support, taken))
    return SelectionResult(tau, threshold, fraction)


def greedy_fill(weights: np.ndarray, scores: np.ndarray, remaining: float) -> tuple[np.ndarray, float, float]:
    """Core knapsack fill over atoms already in tie-break order.

    Returns per-atom amounts taken, the score of the last atom touched
    (``inf`` when nothing is taken) and the fraction of that atom taken.
    """
    # a stable sort on -score keeps the incoming (lexicographic) order among ties
    order = np.argsort(-scores, kind="stable")
    taken = np.zeros(len(weights))
    threshold = math.inf
    fraction = 0.0
    for i in order:
        if scores[i] <= 0.0 or remaining <= CAPACITY_DUST:
            break
        take = min(weights[i], remaining)
        taken[i] = take
        remaining -= take
        threshold = float(scores[i])
        fraction = float(take / weights[i])
    return taken, threshold, fraction


def select(
    eta: AtomicMeasure,
    rho: AtomicMeasure,
    capacity_ratio: float,
    score: Callable[[str], float],
) -> SelectionResult:
    scores = np.array([score(x) for x in eta.support], dtype=float)
    return select_scored(eta, mass(rho), capacity_ratio, scores)


def myopic_policy(spec: ModelSpec, state: PopulationState, capacity_ratio: float, lam: float = 0.0) -> SelectionResult:
    eta = state.untreated
    scores = impactability_array(spec, eta.as_array(), lam) if len(eta) else np.zeros(0)
    return select_scored(eta, mass(state.treated), capacity_ratio, scores)


def adp_policy(spec: ModelSpec, state: PopulationState, capacity_ratio: float, bw: BiasWeights) -> SelectionResult:
    eta = state.untreated
    scores = adjusted_scores(spec, eta.as_array(), bw) if len(eta) else np.zeros(0)
    return select_scored(eta, mass(state.treated), capacity_ratio, scores)


def uniform_threshold(a: float, b: float, M: float, slope_sign: int) -> float:
    """Selection boundary for a uniform population on [a, b] with a linear score.

    A decreasing score selects ``[a, x]`` and an increasing one ``[x, b]``,
    each interval holding a fraction ``M`` of the mass.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not 0.0 <= M <= 1.0:
        raise ValueError("M must lie in [0, 1]")
    if slope_sign < 0:
        return M * b + (1.0 - M) * a
    if slope_sign > 0:
        return (1.0 - M) * b + M * a
    raise ValueError("slope_sign must be nonzero")
