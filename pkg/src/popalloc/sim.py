"""Finite-agent cohort simulator and paired policy comparison.

Each period runs: selection, dropout, reward accrual, death, covariate
evolution and inflow replacement.  Randomness comes from counter-keyed
streams: the uniforms for a given (seed, period, stage) are drawn as one
vector indexed by agent slot, so the noise an agent sees never depends on
what the policy did to other agents.  This is what makes paired runs of two
policies share their random numbers.
"""

from __future__ import annotations

import logging
import math
import weakref
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import _bits
from .adp import BiasWeights, CandidateSet, adjusted_scores, default_candidates, impactability_array, solve_bias_weights
from .measures import AtomicMeasure
from .model import P_MAX_EXACT, ModelSpec
from .policies import greedy_fill
from .stats import ComparisonResult, compare_samples, paired_t, t_cdf, two_sided_p  # noqa: F401  re-exported

log = logging.getLogger(__name__)

MAX_HOME_DAYS = 90.0
INTEGER_SLACK = 1e-9

STAGE_COHORT, STAGE_SELECT, STAGE_DROPOUT, STAGE_DEATH, STAGE_EVOLVE, STAGE_INFLOW, STAGE_ROUND = range(7)
REALIZATIONS = ("systematic", "bernoulli", "top")

Policy = Union[str, BiasWeights]


def stream(seed: int, period: int, stage: int, *extra: int) -> np.random.Generator:
    """Independent generator for one (seed, period, stage) cell."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, period, stage, *extra])))


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    m: int = 100
    T: int = 10
    replications: int = 500
    base_seed: int = 0
    resolve_every: int = 1
    cohort_mix: float = 0.5
    realization: str = "systematic"
    myopic_lambda: float = 0.0
    tol: float = 1e-7

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.m <= self.n:
            raise ValueError(f"need 0 <= m <= n and n >= 1 (n={self.n}, m={self.m})")
        if self.T < 1 or self.replications < 1 or self.resolve_every < 1:
            raise ValueError("T, replications and resolve_every must be at least 1")
        if not 0.0 <= self.cohort_mix <= 1.0:
            raise ValueError("cohort_mix must lie in [0, 1]")
        if self.realization not in REALIZATIONS:
            raise ValueError(f"realization must be one of {REALIZATIONS}")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")

    @property
    def capacity_ratio(self) -> float:
        return self.m / self.n


@dataclass(frozen=True)
class Agent:
    covariates: str
    treated: bool
    alive: bool
    initial_cohort: bool


@dataclass
class Cohort:
    """Agent slots as parallel arrays; every slot always holds a living agent."""

    X: np.ndarray  # (n, p) uint8
    treated: np.ndarray  # (n,) bool
    initial: np.ndarray  # (n,) bool

    def copy(self) -> "Cohort":
        return Cohort(self.X.copy(), self.treated.copy(), self.initial.copy())

    def agents(self) -> list[Agent]:
        keys = _bits.from_array(self.X)
        return [Agent(k, bool(t), True, bool(i)) for k, t, i in zip(keys, self.treated, self.initial)]


@dataclass
class EpisodeResult:
    home_days_per_patient_period: float
    per_period_totals: np.ndarray
    deaths: int
    treated_patient_periods: int
    trace: list = field(default_factory=list)

    def horizon_metric(self, T: int, n: int) -> float:
        return float(self.per_period_totals[:T].sum() / (n * T))


# -- cohort -----------------------------------------------------------------------
def _sample(atoms: AtomicMeasure, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from a finite measure (normalized on the fly)."""
    cum = np.cumsum(atoms.weights)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    return atoms.as_array()[np.minimum(idx, len(atoms) - 1)]


def high_impact_stratum(spec: ModelSpec, quantile: float) -> tuple[AtomicMeasure, AtomicMeasure]:
    """Split the inflow into its top ``quantile`` of mass by impactability (lambda = 0) and the rest.

    Atoms are taken in descending impactability (ties by bitstring) until
    their cumulative mass reaches ``quantile``; the atom crossing the cut
    belongs to the stratum.
    """
    psi = spec.inflow
    scores = impactability_array(spec, psi.as_array(), 0.0)
    order = np.argsort(-scores, kind="stable")
    before = np.concatenate([[0.0], np.cumsum(psi.weights[order])[:-1]])
    top = np.zeros(len(psi), dtype=bool)
    top[order[before < quantile - 1e-12]] = True
    keys = psi.support
    strat = AtomicMeasure((k, w) for k, w, t in zip(keys, psi.weights, top) if t)
    rest = AtomicMeasure((k, w) for k, w, t in zip(keys, psi.weights, top) if not t)
    return strat, rest


def initial_cohort(spec: ModelSpec, cfg: SimConfig, seed: int) -> Cohort:
    """First ``round(cohort_mix * n)`` slots from the high-impact stratum, the rest from its complement."""
    n = cfg.n
    u = stream(seed, 0, STAGE_COHORT).random(n)
    n_top = int(round(cfg.cohort_mix * n))
    strat, rest = high_impact_stratum(spec, cfg.cohort_mix)
    if len(strat) == 0:
        strat = rest
    if len(rest) == 0:
        rest = strat
    X = np.zeros((n, spec.p), dtype=np.uint8)
    if n_top:
        X[:n_top] = _sample(strat, u[:n_top])
    if n_top < n:
        X[n_top:] = _sample(rest, u[n_top:])
    return Cohort(X, np.zeros(n, dtype=bool), np.ones(n, dtype=bool))


# -- scoring -----------------------------------------------------------------------
_bw_cache: "weakref.WeakKeyDictionary[ModelSpec, dict]" = weakref.WeakKeyDictionary()


def cached_bias_weights(spec: ModelSpec, cand: CandidateSet, capacity_ratio: float, tol: float) -> BiasWeights:
    per_spec = _bw_cache.setdefault(spec, {})
    key = (cand, capacity_ratio, tol)
    bw = per_spec.get(key)
    if bw is None:
        bw = solve_bias_weights(spec, capacity_ratio, cand, tol)
        per_spec[key] = bw
    return bw


class _Scorer:
    """Per-atom scores for the selected policy, with table lookup when p is enumerable."""

    def __init__(self, spec: ModelSpec, cfg: SimConfig, policy: Policy):
        self.spec = spec
        self.cfg = cfg
        self.policy = policy
        self.bw = policy if isinstance(policy, BiasWeights) else None
        self._table = None
        if isinstance(policy, str) and policy not in ("none", "myopic", "adp"):
            raise ValueError(f"unknown policy {policy!r}")

    @property
    def active(self) -> bool:
        return self.policy != "none"

    def _score_rows(self, X: np.ndarray) -> np.ndarray:
        if self.policy == "myopic":
            return impactability_array(self.spec, X, self.cfg.myopic_lambda)
        return adjusted_scores(self.spec, X, self.bw)

    def scores(self, period: int, uniq: np.ndarray, population: np.ndarray) -> np.ndarray:
        spec = self.spec
        if self.policy == "adp" and (self.bw is None or period % self.cfg.resolve_every == 0):
            if spec.p <= P_MAX_EXACT:
                cand = CandidateSet.full(spec.p) if self.bw is None else None
            else:
                pop = AtomicMeasure.from_codes(population, np.ones(len(population)), spec.p)
                cand = default_candidates(spec, pop)
            if cand is not None:
                bw = cached_bias_weights(spec, cand, self.cfg.capacity_ratio, self.cfg.tol)
                if bw is not self.bw:
                    self.bw = bw
                    self._table = None
        if spec.p <= P_MAX_EXACT:
            if self._table is None:
                self._table = self._score_rows(_bits.all_states(spec.p))
            return self._table[uniq]
        return self._score_rows(_bits.decode(uniq, spec.p))


# -- episode -----------------------------------------------------------------------
def _select_agents(
    cohort: Cohort,
    codes: np.ndarray,
    scorer: _Scorer,
    cfg: SimConfig,
    seed: int,
    period: int,
) -> np.ndarray:
    """Boolean mask of untreated agents entering treatment this period."""
    n = cfg.n
    chosen = np.zeros(n, dtype=bool)
    u = stream(seed, period, STAGE_SELECT).random(n)
    if not scorer.active:
        return chosen
    untreated = np.flatnonzero(~cohort.treated)
    n_treated = n - untreated.size
    free_slots = cfg.m - n_treated
    if untreated.size == 0 or free_slots <= 0:
        return chosen
    uniq, inverse, counts = np.unique(codes[untreated], return_inverse=True, return_counts=True)
    scores = scorer.scores(period, uniq, codes)
    taken, _, _ = greedy_fill(counts / n, scores, max(cfg.capacity_ratio - n_treated / n, 0.0))
    for a in np.flatnonzero(taken > 0):
        members = untreated[inverse == a]
        k = members.size
        target = taken[a] / (counts[a] / n) * k
        whole = math.floor(target)
        frac = target - whole
        if abs(target - round(target)) <= INTEGER_SLACK:
            c = int(round(target))
        elif cfg.realization == "systematic":
            c = whole + int(stream(seed, period, STAGE_ROUND, int(uniq[a])).random() < frac)
        elif cfg.realization == "top":
            c = whole
        else:
            g = target / k
            chosen[members[u[members] < g]] = True
            continue
        c = min(c, k)
        # lowest selection uniforms win; lexsort breaks exact ties by slot
        pick = members[np.lexsort((members, u[members]))[:c]]
        chosen[pick] = True
    excess = int(chosen.sum()) - free_slots
    if excess > 0:
        # only reachable with independent draws: drop the lowest scores, then the largest uniforms
        idx = np.flatnonzero(chosen)
        atom_of = np.searchsorted(uniq, codes[idx])
        drop = idx[np.lexsort((-u[idx], scores[atom_of]))[:excess]]
        chosen[drop] = False
    return chosen


def run_episode(
    spec: ModelSpec,
    cfg: SimConfig,
    policy: Policy,
    seed: int,
    cohort: Cohort | None = None,
    trace: bool = False,
) -> EpisodeResult:
    """Simulate ``cfg.T`` periods of one policy from the cohort drawn for ``seed``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    n, T = cfg.n, cfg.T
    coh = (cohort or initial_cohort(spec, cfg, seed)).copy()
    if coh.X.shape != (n, spec.p):
        raise ValueError("cohort shape does not match n and p")
    scorer = _Scorer(spec, cfg, policy)
    totals = np.zeros(T)
    deaths = 0
    treated_periods = 0
    records = []
    for t in range(T):
        codes = _bits.encode(coh.X)
        # (I) selection
        entering = _select_agents(coh, codes, scorer, cfg, seed, t)
        coh.treated |= entering
        # (II) dropout
        u_drop = stream(seed, t, STAGE_DROPOUT).random(n)
        dropped = coh.treated & (u_drop < spec.p0(coh.X))
        coh.treated &= ~dropped
        treated_periods += int(coh.treated.sum())
        # (IV) reward for the initial cohort
        reward = np.where(coh.treated, spec.reward_tilde(coh.X, True), spec.reward_tilde(coh.X, False))
        reward = np.clip(reward, 0.0, MAX_HOME_DAYS)
        totals[t] = float(np.sum(reward[coh.initial]))
        # (V) death
        u_death = stream(seed, t, STAGE_DEATH).random(n)
        pdeath = np.where(coh.treated, spec.pd1(coh.X), spec.pd0(coh.X))
        died = u_death < pdeath
        deaths += int(died.sum())
        # (VI) evolution of everyone (dead slots are overwritten below)
        u_evol = stream(seed, t, STAGE_EVOLVE).random((n, spec.p))
        onset = np.where(coh.treated[:, None], spec.onset_probs(coh.X, True), spec.onset_probs(coh.X, False))
        X_next = (u_evol < onset).astype(np.uint8)
        # (VII) inflow replacement
        u_in = stream(seed, t, STAGE_INFLOW).random(n)
        if died.any():
            X_next[died] = _sample(spec.inflow, u_in[died])
        if trace:
            records.append(
                {
                    "X_start": coh.X.copy(),
                    "entering": entering,
                    "dropped": dropped,
                    "reward": reward,
                    "died": died,
                    "X_end": X_next.copy(),
                }
            )
        coh.X = X_next
        coh.treated &= ~died
        coh.initial &= ~died
        if trace:
            records[-1]["treated_end"] = coh.treated.copy()
            records[-1]["initial_end"] = coh.initial.copy()
    metric = float(totals.sum() / (n * T))
    return EpisodeResult(metric, totals, deaths, treated_periods, records)


# -- paired comparison ------------------------------------------------------------
def _pair_worker(args) -> tuple[np.ndarray, np.ndarray]:
    spec, cfg, a, b, seed = args
    ra = run_episode(spec, cfg, a, seed)
    rb = run_episode(spec, cfg, b, seed)
    return ra.per_period_totals, rb.per_period_totals


def _paired_totals(spec, cfg, a, b, threads: int) -> list[tuple[np.ndarray, np.ndarray]]:
    jobs = [(spec, cfg, a, b, cfg.base_seed + r) for r in range(1, cfg.replications + 1)]
    if threads <= 1:
        return [_pair_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_pair_worker, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


@dataclass(frozen=True)
class HorizonRow:
    T: int
    result: ComparisonResult


def compare_horizons(
    spec: ModelSpec,
    cfg: SimConfig,
    horizons: Sequence[int],
    a: Policy = "adp",
    b: Policy = "myopic",
    threads: int = 1,
) -> list[HorizonRow]:
    """Paired comparison at several horizons from one run of the longest.

    Streams are keyed by period and policies are stationary, so the first
    ``T`` periods of a long run equal a run of horizon ``T``.
    """
    horizons = [int(h) for h in horizons]
    if not horizons or min(horizons) < 1:
        raise ValueError("horizons must be positive")
    if cfg.replications < 2:
        raise ValueError("paired comparison needs at least 2 replications")
    long_cfg = SimConfig(**{**cfg.__dict__, "T": max(horizons)})
    pairs = _paired_totals(spec, long_cfg, a, b, threads)
    rows = []
    for T in horizons:
        ma = [float(x[:T].sum() / (cfg.n * T)) for x, _ in pairs]
        mb = [float(y[:T].sum() / (cfg.n * T)) for _, y in pairs]
        rows.append(HorizonRow(T, compare_samples(ma, mb)))
    return rows


def paired_compare(spec: ModelSpec, cfg: SimConfig, a: Policy, b: Policy, threads: int = 1) -> ComparisonResult:
    return compare_horizons(spec, cfg, [cfg.T], a, b, threads)[0].result
