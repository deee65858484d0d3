"""Model primitives: rewards, logistic kernels, mortality, dropout, inflow, bases.

Every function of covariates here is either affine (rewards, bases) or a
logistic of an affine form (kernel coordinates, probabilities), so all
conditional expectations of bases are available in closed form.  The
vectorized helpers take an ``(N, p)`` 0/1 array and return per-row values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import expit, logit

from . import _bits
from .errors import DimensionTooLarge, ParseError, ResultNegative, ValidationError
from .measures import AtomicMeasure, mass

P_MAX_EXACT = 12
INFLOW_MASS_TOL = 1e-10


@dataclass(frozen=True)
class Prob:
    """A per-state probability: a constant or a logistic of an affine form."""

    const: float | None = None
    logits: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.const is None) == (self.logits is None):
            raise ValidationError("probability needs exactly one of const or logits")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        if self.const is not None:
            return np.full(X.shape[0], self.const, dtype=float)
        coef = np.asarray(self.logits, dtype=float)
        return expit(coef[0] + X @ coef[1:])

    def upper_bound(self) -> float:
        """Largest value over all binary vectors (exact for a logistic)."""
        if self.const is not None:
            return self.const
        coef = np.asarray(self.logits, dtype=float)
        return float(expit(coef[0] + coef[1:][coef[1:] > 0].sum()))

    def lower_bound(self) -> float:
        if self.const is not None:
            return self.const
        coef = np.asarray(self.logits, dtype=float)
        return float(expit(coef[0] + coef[1:][coef[1:] < 0].sum()))

    def to_json(self) -> dict:
        if self.const is not None:
            return {"const": self.const}
        return {"logits": list(self.logits)}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    p: int
    reward0: np.ndarray  # (p+1,)  untreated reward, intercept first
    reward1: np.ndarray  # (p+1,)  treated reward
    q0_logits: np.ndarray  # (p, p+1) row i: logit P(x'_i = 1 | x), untreated
    q1_logits: np.ndarray  # (p, p+1) treated
    pd0: Prob
    pd1: Prob
    p0: Prob
    inflow: AtomicMeasure
    bases: np.ndarray  # (K, p+1)

    @property
    def K(self) -> int:
        return self.bases.shape[0]

    # -- vectorized evaluations over rows of X ------------------------------
    def reward_tilde(self, X: np.ndarray, treated: bool) -> np.ndarray:
        coef = self.reward1 if treated else self.reward0
        return coef[0] + np.asarray(X) @ coef[1:]

    def effective_rewards(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(y0, y1): y1 blends the treated reward with dropout to the untreated one."""
        yt0 = self.reward_tilde(X, False)
        yt1 = self.reward_tilde(X, True)
        p0 = self.p0(X)
        return yt0, (1.0 - p0) * yt1 + p0 * yt0

    def death_rates(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(exit rate untreated, exit rate for an agent entering treatment)."""
        pd0 = self.pd0(X)
        return pd0, self.pd1(X) + self.p0(X) * pd0

    def onset_probs(self, X: np.ndarray, treated: bool) -> np.ndarray:
        """(N, p) matrix of P(x'_i = 1 | x)."""
        q = self.q1_logits if treated else self.q0_logits
        return expit(q[:, 0] + np.asarray(X) @ q[:, 1:].T)

    def bases_at(self, X: np.ndarray) -> np.ndarray:
        """(N, K) basis values."""
        return self.bases[:, 0] + np.asarray(X) @ self.bases[:, 1:].T

    def expected_bases_next(self, X: np.ndarray, treated: bool) -> np.ndarray:
        """(N, K) exact E[phi_k(x') | x] under the arm's kernel."""
        return self.bases[:, 0] + self.onset_probs(X, treated) @ self.bases[:, 1:].T

    def inflow_bases(self) -> np.ndarray:
        """(K,) expectations of each basis under the inflow measure."""
        return self.inflow.weights @ self.bases_at(self.inflow.as_array())

    def kernel_matrix(self, X: np.ndarray, treated: bool) -> np.ndarray:
        """(N, 2^p) product-Bernoulli successor probabilities in code order."""
        check_exact(self.p)
        return product_bernoulli(self.onset_probs(X, treated))

    def with_(self, **changes) -> "ModelSpec":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return build_spec(**fields)


def check_exact(p: int) -> None:
    if p > P_MAX_EXACT:
        raise DimensionTooLarge(
            f"p={p} exceeds the exact-enumeration limit {P_MAX_EXACT}; use the sampling simulator"
        )


def product_bernoulli(probs: np.ndarray) -> np.ndarray:
    """Joint pmf over all 2^p outcomes for rows of independent coordinate probabilities.

    Column index is the integer code with coordinate 0 as the most significant bit.
    """
    probs = np.asarray(probs, dtype=float)
    out = np.ones((probs.shape[0], 1))
    for i in range(probs.shape[1]):
        q = probs[:, i : i + 1]
        out = np.stack([out * (1.0 - q), out * q], axis=2).reshape(probs.shape[0], -1)
    return out


# -- single-point operations ---------------------------------------------------
def _row(spec: ModelSpec, x) -> np.ndarray:
    arr = _bits.to_array([_bits.as_bitstring(x)])
    if arr.shape[1] != spec.p:
        raise ValidationError(f"covariate length {arr.shape[1]} != p={spec.p}")
    return arr


def y_lambda(spec: ModelSpec, x, lam: float) -> tuple[float, float]:
    """Mortality-penalized rewards (untreated, treated) at one state."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    X = _row(spec, x)
    y0, y1 = spec.effective_rewards(X)
    d0, d1 = spec.death_rates(X)
    return float(y0[0] - lam * d0[0]), float(y1[0] - lam * d1[0])


def y_lambda_arrays(spec: ModelSpec, X: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    y0, y1 = spec.effective_rewards(X)
    d0, d1 = spec.death_rates(X)
    return y0 - lam * d0, y1 - lam * d1


def transition_distribution(spec: ModelSpec, x, treated: bool) -> AtomicMeasure:
    check_exact(spec.p)
    row = spec.kernel_matrix(_row(spec, x), treated)[0]
    return AtomicMeasure(zip(_bits.all_bitstrings(spec.p), row))


def expected_basis_next(spec: ModelSpec, x, treated: bool, k: int) -> float:
    if not 0 <= k < spec.K:
        raise IndexError(f"basis index {k} out of range for K={spec.K}")
    return float(spec.expected_bases_next(_row(spec, x), treated)[0, k])


# -- construction and validation ---------------------------------------------
def _prob_from_json(value: Any, name: str, p: int) -> Prob:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = {"const": value}
    if not isinstance(value, dict) or len(value) != 1:
        raise ParseError(f"{name}: expected {{'const': c}} or {{'logits': [...]}}")
    if "const" in value:
        return Prob(const=float(value["const"]))
    if "logits" in value:
        coef = tuple(float(v) for v in value["logits"])
        if len(coef) != p + 1:
            raise ValidationError(f"{name}: logits need p+1={p + 1} entries, got {len(coef)}")
        return Prob(logits=coef)
    raise ParseError(f"{name}: unknown probability form {sorted(value)}")


def _affine(value: Any, name: str, p: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (p + 1,):
        raise ValidationError(f"{name}: expected an affine vector of length {p + 1}, got shape {arr.shape}")
    return arr


def _matrix(value: Any, name: str, rows: int, p: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != p + 1 or (rows >= 0 and arr.shape[0] != rows):
        want = f"({rows}, {p + 1})" if rows >= 0 else f"(K, {p + 1})"
        raise ValidationError(f"{name}: expected shape {want}, got {arr.shape}")
    return arr


def build_spec(p, reward0, reward1, q0_logits, q1_logits, pd0, pd1, p0, inflow, bases) -> ModelSpec:
    """Assemble and validate a spec from Python values (arrays, Prob or JSON forms)."""
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValidationError(f"p must be a positive integer, got {p!r}")
    p = int(p)
    probs = {}
    for name, value in (("pd0", pd0), ("pd1", pd1), ("p0", p0)):
        probs[name] = value if isinstance(value, Prob) else _prob_from_json(value, name, p)
        pr = probs[name]
        if pr.const is not None and not 0.0 <= pr.const <= 1.0:
            raise ValidationError(f"{name}: constant probability {pr.const} outside [0, 1]")
        if pr.logits is not None and len(pr.logits) != p + 1:
            raise ValidationError(f"{name}: logits need p+1={p + 1} entries")
    if not isinstance(inflow, AtomicMeasure):
        try:
            inflow = AtomicMeasure((str(k), float(w)) for k, w in inflow)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"inflow: {exc}") from exc
        except ResultNegative as exc:
            raise ValidationError(f"inflow: {exc}") from exc
    if len(inflow) == 0:
        raise ValidationError("inflow: empty measure")
    if inflow.p != p:
        raise ValidationError(f"inflow: atoms have length {inflow.p}, expected p={p}")
    if abs(mass(inflow) - 1.0) > INFLOW_MASS_TOL:
        raise ValidationError(f"inflow: mass {mass(inflow)!r} is not 1")
    bases = _matrix(bases, "bases", -1, p)
    if bases.shape[0] < 1:
        raise ValidationError("bases: need at least one basis function")
    spec = ModelSpec(
        p=p,
        reward0=_affine(reward0, "reward0", p),
        reward1=_affine(reward1, "reward1", p),
        q0_logits=_matrix(q0_logits, "q0_logits", p, p),
        q1_logits=_matrix(q1_logits, "q1_logits", p, p),
        pd0=probs["pd0"],
        pd1=probs["pd1"],
        p0=probs["p0"],
        inflow=inflow,
        bases=bases,
    )
    for name in ("reward0", "reward1", "q0_logits", "q1_logits", "bases"):
        arr = getattr(spec, name)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name}: non-finite coefficient")
        arr.setflags(write=False)
    _check_survival(spec)
    return spec


def _check_survival(spec: ModelSpec) -> None:
    """Treated agents need 1 - pd1(x) - p0(x) >= 0 so the treated measure stays nonnegative."""
    if spec.p <= P_MAX_EXACT:
        X = _bits.all_states(spec.p)
        slack = 1.0 - spec.pd1(X) - spec.p0(X)
        worst = float(slack.min())
        if worst < -1e-12:
            x = _bits.from_array(X[int(np.argmin(slack))])[0]
            raise ValidationError(f"1 - pd1 - p0 = {worst:.3g} < 0 at state {x}")
    else:
        worst = 1.0 - spec.pd1.upper_bound() - spec.p0.upper_bound()
        if worst < -1e-12:
            raise ValidationError(f"1 - pd1 - p0 may reach {worst:.3g} < 0 (conservative bound)")


def spec_from_dict(d: dict) -> ModelSpec:
    required = ("p", "reward0", "reward1", "q0_logits", "q1_logits", "pd0", "pd1", "p0", "inflow", "bases")
    missing = [k for k in required if k not in d]
    if missing:
        raise ParseError(f"spec is missing fields: {', '.join(missing)}")
    try:
        return build_spec(**{k: d[k] for k in required})
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "p": spec.p,
        "reward0": spec.reward0.tolist(),
        "reward1": spec.reward1.tolist(),
        "q0_logits": spec.q0_logits.tolist(),
        "q1_logits": spec.q1_logits.tolist(),
        "pd0": spec.pd0.to_json(),
        "pd1": spec.pd1.to_json(),
        "p0": spec.p0.to_json(),
        "inflow": [[k, w] for k, w in spec.inflow.items()],
        "bases": spec.bases.tolist(),
    }


def dumps_spec(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n"


def load_spec(path) -> ModelSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read spec {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return spec_from_dict(data)


def save_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(dumps_spec(spec))


# -- synthetic instances -------------------------------------------------------
def gen_synthetic(
    seed: int,
    p: int,
    K: int,
    mortality_odds_ratio: float = 0.7,
    dropout: float = 0.1,
    base_mortality: float = 0.06,
    inflow_sample: int = 256,
) -> ModelSpec:
    """Random instance where treatment helps, mortality rises with illness, rewards fall.

    Treatment lowers every onset logit by a positive amount, the treated
    mortality logit is the untreated one shifted by ``log(mortality_odds_ratio)``
    (so pd1 <= pd0 whenever the ratio is at most 1), and reward slopes are
    negative.  Basis 0 is the untreated reward; the rest are random
    nonnegative combinations of comorbidity indicators.
    """
    if p < 1 or K < 1:
        raise ValidationError("gen_synthetic needs p >= 1 and K >= 1")
    if not 0 < mortality_odds_ratio <= 1:
        raise ValidationError("mortality_odds_ratio must lie in (0, 1]")
    rng = np.random.default_rng(seed)

    # onset kernels: persistence on the diagonal, weak positive coupling elsewhere
    q0 = np.zeros((p, p + 1))
    q0[:, 0] = rng.uniform(-3.0, -1.5, size=p)
    q0[:, 1:] = rng.uniform(0.0, 0.4, size=(p, p))
    q0[np.arange(p), np.arange(p) + 1] = rng.uniform(2.5, 4.0, size=p)
    q1 = q0.copy()
    q1[:, 0] -= rng.uniform(0.3, 1.0, size=p)

    pd0 = np.zeros(p + 1)
    pd0[0] = logit(base_mortality)
    pd0[1:] = rng.uniform(0.0, 2.0 / p, size=p)
    pd1 = pd0.copy()
    pd1[0] += np.log(mortality_odds_ratio)

    r0 = np.zeros(p + 1)
    r0[0] = rng.uniform(84.0, 87.0)
    r0[1:] = -rng.uniform(0.5, 3.0, size=p)
    r1 = r0.copy()
    r1[0] += rng.uniform(0.0, 0.5)
    r1[1:] *= rng.uniform(0.6, 1.0, size=p)

    prev = rng.uniform(0.05, 0.35, size=p)
    if p <= 10:
        pmf = product_bernoulli(prev[None, :])[0]
        inflow = AtomicMeasure(zip(_bits.all_bitstrings(p), pmf))
        inflow = inflow.normalized()
    else:
        draws = (rng.random((inflow_sample, p)) < prev).astype(np.uint8)
        inflow = AtomicMeasure.from_arrays(draws, np.full(inflow_sample, 1.0 / inflow_sample))

    bases = np.zeros((K, p + 1))
    bases[0] = r0
    for k in range(1, K):
        bases[k, 1:] = rng.uniform(0.0, 1.0, size=p) * (rng.random(p) < 0.6)

    return build_spec(
        p=p,
        reward0=r0,
        reward1=r1,
        q0_logits=q0,
        q1_logits=q1,
        pd0=Prob(logits=tuple(pd0.tolist())),
        pd1=Prob(logits=tuple(pd1.tolist())),
        p0=Prob(const=float(dropout)),
        inflow=inflow,
        bases=bases,
    )
