"""Deterministic measure-valued population transition and the uncontrolled chain."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from . import _bits
from .errors import (
    InfeasibleAction,
    NegativeSurvival,
    NoConvergence,
    ResultNegative,
    ValidationError,
)
from .measures import AtomicMeasure, PopulationState, combine
from .model import ModelSpec, check_exact

NEG_SURVIVAL_TOL = 1e-12
DENSE_KERNEL_MAX_P = 10


def to_dense(m: AtomicMeasure, p: int) -> np.ndarray:
    out = np.zeros(2**p)
    if len(m):
        if m.p != p:
            raise ValidationError(f"measure dimension {m.p} != p={p}")
        out[m.codes()] = m.weights
    return out


def from_dense(vec: np.ndarray, p: int) -> AtomicMeasure:
    nz = np.flatnonzero(vec > 0.0)
    return AtomicMeasure.from_codes(nz, vec[nz], p)


@dataclass(frozen=True)
class TransitionReport:
    next: PopulationState
    mortality_outflow: float
    survival_rate: float


def _push(spec: ModelSpec, X: np.ndarray, w: np.ndarray, treated: bool) -> np.ndarray:
    """Dense pushforward of row weights ``w`` at states ``X`` through one arm's kernel."""
    if X.shape[0] == 0:
        return np.zeros(2**spec.p)
    return w @ spec.kernel_matrix(X, treated)


def transition(spec: ModelSpec, state: PopulationState, tau: AtomicMeasure) -> TransitionReport:
    """One period of the controlled dynamics for untreated/treated measures and action ``tau``."""
    check_exact(spec.p)
    try:
        rest = combine(state.untreated, tau, 1.0, -1.0)
    except ResultNegative as exc:
        raise InfeasibleAction(f"action exceeds the untreated measure: {exc}") from exc
    treat = combine(state.treated, tau)
    p = spec.p

    Xa, wa = treat.as_array(p), treat.weights
    Xb, wb = rest.as_array(p), rest.weights

    pd0a, pd1a, p0a = spec.pd0(Xa), spec.pd1(Xa), spec.p0(Xa)
    stay = 1.0 - pd1a - p0a
    if stay.size and stay.min() < -NEG_SURVIVAL_TOL:
        i = int(np.argmin(stay))
        raise NegativeSurvival(f"1 - pd1 - p0 = {stay[i]:.3g} at {treat.support[i]}")
    stay = np.maximum(stay, 0.0)
    pd0b = spec.pd0(Xb)

    deaths = float(wa @ (pd1a + p0a * pd0a) + wb @ pd0b)
    rho_next = _push(spec, Xa, wa * stay, True)
    eta_next = (
        _push(spec, Xb, wb * (1.0 - pd0b), False)
        + _push(spec, Xa, wa * p0a * (1.0 - pd0a), False)
        + deaths * to_dense(spec.inflow, p)
    )
    nxt = PopulationState(from_dense(eta_next, p), from_dense(rho_next, p))
    return TransitionReport(nxt, deaths, 1.0 - deaths)


# -- uncontrolled chain ----------------------------------------------------------
_kernel_cache: "weakref.WeakKeyDictionary[ModelSpec, np.ndarray]" = weakref.WeakKeyDictionary()


def uncontrolled_kernel(spec: ModelSpec) -> np.ndarray:
    """Dense (2^p, 2^p) row-stochastic matrix of the no-treatment chain with inflow replacement."""
    check_exact(spec.p)
    K = _kernel_cache.get(spec)
    if K is None:
        X = _bits.all_states(spec.p)
        pd0 = spec.pd0(X)
        K = (1.0 - pd0)[:, None] * spec.kernel_matrix(X, False)
        K += pd0[:, None] * to_dense(spec.inflow, spec.p)[None, :]
        K.setflags(write=False)
        if spec.p <= DENSE_KERNEL_MAX_P:
            _kernel_cache[spec] = K
    return K


def _step_dense(spec: ModelSpec, vec: np.ndarray, kernel: np.ndarray | None) -> np.ndarray:
    if kernel is not None:
        return vec @ kernel
    nz = np.flatnonzero(vec)
    X = _bits.decode(nz, spec.p)
    w = vec[nz]
    pd0 = spec.pd0(X)
    out = np.zeros_like(vec)
    for start in range(0, len(nz), 512):
        sl = slice(start, start + 512)
        out += (w[sl] * (1.0 - pd0[sl])) @ spec.kernel_matrix(X[sl], False)
    return out + float(w @ pd0) * to_dense(spec.inflow, spec.p)


def uncontrolled_step(spec: ModelSpec, mu: AtomicMeasure) -> AtomicMeasure:
    check_exact(spec.p)
    kernel = uncontrolled_kernel(spec) if spec.p <= DENSE_KERNEL_MAX_P else None
    return from_dense(_step_dense(spec, to_dense(mu, spec.p), kernel), spec.p)


def _tv_dense(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(max(d[d > 0].sum(), -d[d < 0].sum()))


def find_invariant(
    spec: ModelSpec,
    mu0: AtomicMeasure,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    min_death: float = 1e-12,
    history: list | None = None,
) -> tuple[AtomicMeasure, int]:
    """Fixed-point iteration of the uncontrolled chain.

    Returns the first iterate ``mu_t`` whose one-step change is at most
    ``tol`` in total variation, together with the number of kernel
    applications performed.  If ``history`` is a list, the successive TV
    values are appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_exact(spec.p)
    worst = float(spec.pd0(_bits.all_states(spec.p)).min())
    if worst <= min_death:
        raise ValidationError(f"min pd0 = {worst:.3g} does not exceed {min_death:g}")
    kernel = uncontrolled_kernel(spec) if spec.p <= DENSE_KERNEL_MAX_P else None
    cur = to_dense(mu0, spec.p)
    tv = float("inf")
    for it in range(1, max_iter + 1):
        nxt = _step_dense(spec, cur, kernel)
        tv = _tv_dense(nxt, cur)
        if history is not None:
            history.append(tv)
        if tv <= tol:
            return from_dense(cur, spec.p), it
        cur = nxt
    raise NoConvergence(
        f"no convergence after {max_iter} iterations (TV {tv:.3g})",
        measure=from_dense(cur, spec.p),
        tv=tv,
        iterations=max_iter,
    )
