"""Drift terms, mortality threshold and row generation for the approximate equilibrium LP.

The master problem in variables ``(w_1..w_K, lam, zeta0, zeta1)`` is

    min  r*zeta1 + (1-r)*zeta0 + delta*lam
    s.t. zeta0 + w.D0(x) + lam*d0(x) >= y0(x)   for generated x
         zeta1 + w.D1(x) + lam*d1(x) >= y1(x)   for generated x
         zeta1 - zeta0 >= 0

with ``r`` the capacity ratio, ``D0``/``D1`` the per-arm basis drifts and
``d0``/``d1`` the per-arm exit probabilities.  Rows are added by exhaustive
scoring over a finite candidate set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _bits
from .errors import MasterInfeasible, MaxRoundsExceeded, NumericalFailure, PrimalInfeasible
from .lp import EQ, GE, LE, LinearProgram, solve
from .measures import AtomicMeasure
from .model import P_MAX_EXACT, ModelSpec, y_lambda_arrays

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ROUNDS = 500
WEIGHT_BOX = 1e6


class CandidateSet:
    """Sorted, duplicate-free finite set of covariate vectors."""

    def __init__(self, points: Iterable):
        pts = sorted({_bits.as_bitstring(x) for x in points})
        if not pts:
            raise ValueError("candidate set must be nonempty")
        if len({len(x) for x in pts}) != 1:
            raise ValueError("candidate points have mixed dimension")
        self.points = tuple(pts)
        self.X = _bits.to_array(pts)
        self.X.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, CandidateSet) and self.points == other.points

    def __hash__(self) -> int:
        return hash(self.points)

    @classmethod
    def full(cls, p: int) -> "CandidateSet":
        return cls(_bits.all_bitstrings(p))


def default_candidates(spec: ModelSpec, population: AtomicMeasure | None = None) -> CandidateSet:
    """Population support, inflow support and, when enumerable, every binary vector."""
    pts = set(spec.inflow.support)
    if population is not None:
        pts |= set(population.support)
    if spec.p <= P_MAX_EXACT:
        pts |= set(_bits.all_bitstrings(spec.p))
    return CandidateSet(pts)


# -- drift terms -----------------------------------------------------------------
def delta_arrays(spec: ModelSpec, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(N, K) drift matrices for the untreated and treated arms at rows of X."""
    X = np.asarray(X)
    pd0, pd1, p0 = spec.pd0(X), spec.pd1(X), spec.p0(X)
    e0 = spec.expected_bases_next(X, False)
    e1 = spec.expected_bases_next(X, True)
    epsi = spec.inflow_bases()[None, :]
    phi = spec.bases_at(X)
    d0 = (1 - pd0)[:, None] * e0 + pd0[:, None] * epsi - phi
    d1 = (
        (1 - pd1 - p0)[:, None] * e1
        + (p0 * (1 - pd0))[:, None] * e0
        + (pd1 + p0 * pd0)[:, None] * epsi
        - phi
    )
    return d0, d1


def delta_t(spec: ModelSpec, x, arm: int, k: int) -> float:
    if not 0 <= k < spec.K:
        raise IndexError(f"basis index {k} out of range for K={spec.K}")
    X = _bits.to_array([_bits.as_bitstring(x)])
    d0, d1 = delta_arrays(spec, X)
    return float((d1 if arm else d0)[0, k])


def impactability(spec: ModelSpec, x, lam: float) -> float:
    X = _bits.to_array([_bits.as_bitstring(x)])
    return float(impactability_array(spec, X, lam)[0])


def impactability_array(spec: ModelSpec, X: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    y0, y1 = y_lambda_arrays(spec, X, lam)
    return y1 - y0


@dataclass
class BiasWeights:
    w: np.ndarray
    lam: float
    zeta0: float
    zeta1: float
    delta_star: float
    generated_rows: list = field(default_factory=list)
    objective: float = float("nan")
    rounds: int = 0
    max_violation: float = float("nan")
    box_active: bool = False
    objective_history: list = field(default_factory=list)

    @classmethod
    def zero(cls, K: int) -> "BiasWeights":
        return cls(np.zeros(K), 0.0, 0.0, 0.0, 0.0)

    def to_json(self) -> dict:
        return {
            "w": [float(v) for v in self.w],
            "lambda": self.lam,
            "zeta0": self.zeta0,
            "zeta1": self.zeta1,
            "delta_star": self.delta_star,
            "objective": self.objective,
            "rounds": self.rounds,
            "generated_rows": len(self.generated_rows),
            "max_violation": self.max_violation,
            "box_active": self.box_active,
        }


def adjusted_scores(spec: ModelSpec, X: np.ndarray, bw: BiasWeights) -> np.ndarray:
    """Vectorized adjusted impactability at rows of X."""
    base = impactability_array(spec, X, bw.lam)
    if not np.any(bw.w):
        return base
    d0, d1 = delta_arrays(spec, X)
    return base - (d1 - d0) @ np.asarray(bw.w, dtype=float)


def adjusted_impactability(spec: ModelSpec, x, bw: BiasWeights) -> float:
    X = _bits.to_array([_bits.as_bitstring(x)])
    return float(adjusted_scores(spec, X, bw)[0])


# -- row generation --------------------------------------------------------------
@dataclass
class _Instance:
    """Per-candidate arrays shared by the master and the subproblems."""

    y0: np.ndarray
    y1: np.ndarray
    d0: np.ndarray | None  # None drops the lambda column
    d1: np.ndarray | None
    D0: np.ndarray
    D1: np.ndarray

    @classmethod
    def rewards(cls, spec: ModelSpec, cand: CandidateSet) -> "_Instance":
        y0, y1 = spec.effective_rewards(cand.X)
        d0, d1 = spec.death_rates(cand.X)
        D0, D1 = delta_arrays(spec, cand.X)
        return cls(y0, y1, d0, d1, D0, D1)

    @classmethod
    def survival(cls, spec: ModelSpec, cand: CandidateSet) -> "_Instance":
        d0, d1 = spec.death_rates(cand.X)
        D0, D1 = delta_arrays(spec, cand.X)
        return cls(1.0 - d0, 1.0 - d1, None, None, D0, D1)


def _run(inst: _Instance, cand: CandidateSet, delta_star: float, r: float, tol: float, max_rounds: int):
    K = inst.D0.shape[1]
    has_lam = inst.d0 is not None
    n = K + (3 if has_lam else 2)
    iz0, iz1 = n - 2, n - 1
    c = np.zeros(n)
    c[iz0], c[iz1] = 1.0 - r, r
    free = np.ones(n, dtype=bool)
    if has_lam:
        c[K] = delta_star
        free[K] = False

    fixed_rows: list[tuple[np.ndarray, str, float]] = []
    zrow = np.zeros(n)
    zrow[iz1], zrow[iz0] = 1.0, -1.0
    fixed_rows.append((zrow, GE, 0.0))
    box_idx = list(range(K)) + ([K] if has_lam else [])
    for j in box_idx:
        e = np.zeros(n)
        e[j] = 1.0
        fixed_rows.append((e, LE, WEIGHT_BOX))
        if free[j]:
            fixed_rows.append((-e, LE, WEIGHT_BOX))

    def row_for(i: int, arm: int) -> tuple[np.ndarray, str, float]:
        a = np.zeros(n)
        a[:K] = (inst.D1 if arm else inst.D0)[i]
        if has_lam:
            a[K] = (inst.d1 if arm else inst.d0)[i]
        a[iz1 if arm else iz0] = 1.0
        return a, GE, float((inst.y1 if arm else inst.y0)[i])

    generated: list[tuple[int, int]] = [(int(np.argmax(inst.y0)), 0), (int(np.argmax(inst.y1)), 1)]
    seen = set(generated)
    history: list[float] = []
    best = None
    for rnd in range(1, max_rounds + 1):
        rows = fixed_rows + [row_for(i, a) for i, a in generated]
        sol = solve(LinearProgram.from_rows(c, rows, free))
        if sol.status.value == "Infeasible":
            raise MasterInfeasible("row-generation master is infeasible")
        if not sol.optimal:
            raise NumericalFailure(f"row-generation master returned {sol.status.value}")
        v = sol.values
        w = v[:K]
        lam = float(v[K]) if has_lam else 0.0
        z0, z1 = float(v[iz0]), float(v[iz1])
        viol0 = inst.y0 - inst.D0 @ w - z0
        viol1 = inst.y1 - inst.D1 @ w - z1
        if has_lam:
            viol0 = viol0 - lam * inst.d0
            viol1 = viol1 - lam * inst.d1
        i0, i1 = int(np.argmax(viol0)), int(np.argmax(viol1))
        worst = max(float(viol0[i0]), float(viol1[i1]), z0 - z1)
        history.append(sol.objective_value)
        box = bool(np.any(np.abs(v[box_idx]) >= WEIGHT_BOX * (1 - 1e-9)))
        best = BiasWeights(
            w=w.copy(),
            lam=max(lam, 0.0),
            zeta0=z0,
            zeta1=z1,
            delta_star=delta_star,
            generated_rows=[(cand.points[i], a) for i, a in generated],
            objective=sol.objective_value,
            rounds=rnd,
            max_violation=max(worst, 0.0),
            box_active=box,
            objective_history=list(history),
        )
        if worst <= tol:
            return best, sol
        added = False
        for i, a, val in ((i0, 0, viol0[i0]), (i1, 1, viol1[i1])):
            if val > tol and (i, a) not in seen:
                generated.append((i, a))
                seen.add((i, a))
                added = True
        if not added:
            raise NumericalFailure(
                f"violated row already in the master (violation {worst:.3g}); LP tolerance too loose for tol={tol:g}"
            )
    raise MaxRoundsExceeded(
        f"row generation stopped after {max_rounds} rounds (violation {best.max_violation:.3g})",
        best=best,
        max_violation=best.max_violation,
    )


def mortality_threshold(
    spec: ModelSpec,
    cand: CandidateSet,
    capacity_ratio: float,
    tol: float = DEFAULT_TOL,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> float:
    """Lowest equilibrium mortality reachable under the capacity ratio."""
    _check_ratio(capacity_ratio)
    bw, _ = _run(_Instance.survival(spec, cand), cand, 0.0, capacity_ratio, tol, max_rounds)
    return 1.0 - bw.objective


def row_generation(
    spec: ModelSpec,
    cand: CandidateSet,
    delta_star: float,
    capacity_ratio: float,
    tol: float = DEFAULT_TOL,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> BiasWeights:
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_ratio(capacity_ratio)
    bw, _ = _run(_Instance.rewards(spec, cand), cand, delta_star, capacity_ratio, tol, max_rounds)
    if bw.box_active:
        log.warning("weight box |w| <= %g is active; master objective is a bound only", WEIGHT_BOX)
    return bw


def solve_bias_weights(
    spec: ModelSpec,
    capacity_ratio: float,
    cand: CandidateSet | None = None,
    tol: float = DEFAULT_TOL,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> BiasWeights:
    """Mortality threshold followed by row generation, on the default candidates if none given."""
    cand = cand or default_candidates(spec)
    dstar = mortality_threshold(spec, cand, capacity_ratio, tol, max_rounds)
    return row_generation(spec, cand, dstar, capacity_ratio, tol, max_rounds)


@dataclass
class PrimalSolution:
    objective: float
    xi: AtomicMeasure
    varrho: AtomicMeasure


def finite_primal(
    spec: ModelSpec, cand: CandidateSet, delta_star: float | None, capacity_ratio: float
) -> PrimalSolution:
    """Maximize equilibrium reward over atom weights on the candidates.

    Passing ``delta_star=None`` builds the survival-reward variant without the
    mortality row, the primal counterpart of :func:`mortality_threshold`.
    """
    inst = _Instance.rewards(spec, cand) if delta_star is not None else _Instance.survival(spec, cand)
    N, K = inst.D0.shape
    c = -np.concatenate([inst.y0, inst.y1])
    rows = [(np.concatenate([inst.D0[:, k], inst.D1[:, k]]), EQ, 0.0) for k in range(K)]
    if delta_star is not None:
        rows.append((np.concatenate([inst.d0, inst.d1]), LE, delta_star))
    rows.append((np.ones(2 * N), EQ, 1.0))
    rows.append((np.concatenate([np.zeros(N), np.ones(N)]), LE, capacity_ratio))
    sol = solve(LinearProgram.from_rows(c, rows))
    if not sol.optimal:
        raise PrimalInfeasible(f"finite primal is {sol.status.value}")
    x = sol.values
    return PrimalSolution(
        -sol.objective_value,
        AtomicMeasure(zip(cand.points, x[:N])),
        AtomicMeasure(zip(cand.points, x[N:])),
    )


def duality_gap_check(
    spec: ModelSpec, cand: CandidateSet, bw: BiasWeights, delta_star: float, capacity_ratio: float
) -> float:
    """|finite primal optimum - master optimum|; raises PrimalInfeasible when the primal is empty."""
    return abs(finite_primal(spec, cand, delta_star, capacity_ratio).objective - bw.objective)


def _check_ratio(r: float) -> None:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"capacity ratio {r} outside [0, 1]")
