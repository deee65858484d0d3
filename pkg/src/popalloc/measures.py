"""Finite nonnegative measures over binary covariate vectors.

Atoms are keyed by canonical bitstrings (``"0110"``); iteration is always in
lexicographic key order so every downstream reduction is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Tuple, Union

import numpy as np

from . import _bits
from .errors import NotAbsolutelyContinuous, ResultNegative

NEG_DUST = 1e-12
MASS_TOL = 1e-10

Pairs = Union[Mapping[str, float], Iterable[Tuple[str, float]]]


class AtomicMeasure:
    """Immutable weighted point set over bitstrings."""

    __slots__ = ("_keys", "_weights", "_index", "_p")

    def __init__(self, atoms: Pairs = ()):
        items = atoms.items() if isinstance(atoms, Mapping) else atoms
        acc: dict[str, float] = {}
        for key, w in items:
            key = _bits.as_bitstring(key)
            acc[key] = acc.get(key, 0.0) + float(w)
        lengths = {len(k) for k in acc}
        if len(lengths) > 1:
            raise ValueError(f"atoms of mixed dimension: {sorted(lengths)}")
        keys = []
        weights = []
        for key in sorted(acc):
            w = acc[key]
            if not np.isfinite(w):
                raise ValueError(f"non-finite weight at {key}")
            if w < -NEG_DUST:
                raise ResultNegative(f"negative weight {w:.3g} at atom {key}")
            if w > 0.0:
                keys.append(key)
                weights.append(w)
        self._keys = tuple(keys)
        self._weights = np.array(weights, dtype=float)
        self._weights.setflags(write=False)
        self._index = {k: i for i, k in enumerate(keys)}
        self._p = lengths.pop() if lengths else None

    @classmethod
    def from_arrays(cls, X: np.ndarray, weights: np.ndarray) -> "AtomicMeasure":
        """Build from an (N, p) 0/1 array; duplicate rows are merged."""
        return cls(zip(_bits.from_array(X), np.asarray(weights, dtype=float)))

    @classmethod
    def from_codes(cls, codes: np.ndarray, weights: np.ndarray, p: int) -> "AtomicMeasure":
        codes = np.asarray(codes, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        if codes.size == 0:
            return cls()
        uniq, inv = np.unique(codes, return_inverse=True)
        summed = np.bincount(inv, weights=weights, minlength=len(uniq))
        return cls(zip(_bits.from_array(_bits.decode(uniq, p)), summed))

    @classmethod
    def point(cls, x, weight: float = 1.0) -> "AtomicMeasure":
        return cls({_bits.as_bitstring(x): weight})

    # -- mapping-ish surface -------------------------------------------------
    @property
    def p(self) -> int | None:
        return self._p

    @property
    def support(self) -> tuple[str, ...]:
        return self._keys

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    def as_array(self, p: int | None = None) -> np.ndarray:
        """(N, p) 0/1 rows of the support; ``p`` sizes the result for an empty measure."""
        return _bits.to_array(self._keys, self._p if self._p is not None else p)

    def codes(self) -> np.ndarray:
        if not self._keys:
            return np.zeros(0, dtype=np.int64)
        return _bits.encode(self.as_array())

    def items(self) -> Iterator[tuple[str, float]]:
        return zip(self._keys, self._weights.tolist())

    def __getitem__(self, x) -> float:
        i = self._index.get(_bits.as_bitstring(x))
        return 0.0 if i is None else float(self._weights[i])

    def __contains__(self, x) -> bool:
        return _bits.as_bitstring(x) in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return self._keys == other._keys and np.array_equal(self._weights, other._weights)

    def __hash__(self):
        return hash((self._keys, self._weights.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {w:.6g}" for k, w in self.items())
        return f"AtomicMeasure({{{body}}})"

    def scaled(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(zip(self._keys, self._weights * c))

    def normalized(self) -> "AtomicMeasure":
        total = mass(self)
        if total <= 0.0:
            raise ValueError("cannot normalize a zero measure")
        return self.scaled(1.0 / total)

    def restrict(self, keep: Callable[[str], bool]) -> "AtomicMeasure":
        return AtomicMeasure((k, w) for k, w in self.items() if keep(k))

    # -- text table ------------------------------------------------------------
    def to_table(self) -> str:
        return "".join(f"{k},{w:.17g}\n" for k, w in self.items())

    @classmethod
    def from_table(cls, text: str) -> "AtomicMeasure":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                key, w = line.split(",")
                pairs.append((key.strip(), float(w)))
            except ValueError as exc:
                raise ValueError(f"bad measure row {lineno}: {line!r}") from exc
        return cls(pairs)


def mass(m: AtomicMeasure) -> float:
    return float(m.weights.sum()) if len(m) else 0.0


def expectation(m: AtomicMeasure, f: Callable[[str], float]) -> float:
    """Integral of ``f`` against ``m``; ``f`` receives bitstrings."""
    return float(sum(f(k) * w for k, w in m.items()))


def combine(a: AtomicMeasure, b: AtomicMeasure, alpha: float = 1.0, beta: float = 1.0) -> AtomicMeasure:
    """Atomwise ``alpha*a + beta*b``.

    Weights in ``[-1e-12, 0)`` are clamped to zero; anything more negative
    raises :class:`ResultNegative` (typically a selection exceeding the
    untreated mass it draws from).
    """
    out: dict[str, float] = {}
    for k, w in a.items():
        out[k] = alpha * w
    for k, w in b.items():
        out[k] = out.get(k, 0.0) + beta * w
    bad = {k: w for k, w in out.items() if w < -NEG_DUST}
    if bad:
        k = min(bad)
        raise ResultNegative(f"combined weight {bad[k]:.3g} < 0 at atom {k}")
    return AtomicMeasure((k, max(w, 0.0)) for k, w in out.items())


class Density:
    """Pointwise ratio ``tau(x) / eta(x)``, zero off the support of ``eta``."""

    def __init__(self, values: Mapping[str, float]):
        self.values = dict(values)

    def __call__(self, x) -> float:
        return self.values.get(_bits.as_bitstring(x), 0.0)


def radon_nikodym(tau: AtomicMeasure, eta: AtomicMeasure) -> Density:
    values = {}
    for k, t in tau.items():
        e = eta[k]
        if e <= 0.0:
            raise NotAbsolutelyContinuous(f"tau has mass {t:.3g} at {k} where eta is zero")
        values[k] = t / e
    for k in eta:
        values.setdefault(k, 0.0)
    return Density(values)


def total_variation(a: AtomicMeasure, b: AtomicMeasure) -> float:
    """sup over sets A of |a(A) - b(A)|; equals half the L1 distance for probabilities."""
    keys = set(a.support) | set(b.support)
    diff = np.array([a[k] - b[k] for k in sorted(keys)], dtype=float)
    if diff.size == 0:
        return 0.0
    return float(max(diff[diff > 0].sum(), -diff[diff < 0].sum()))


@dataclass(frozen=True)
class PopulationState:
    """Untreated measure ``untreated`` (eta) and treated measure ``treated`` (rho)."""

    untreated: AtomicMeasure
    treated: AtomicMeasure

    def __post_init__(self):
        total = mass(self.untreated) + mass(self.treated)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"population mass {total!r} is not 1")

    @property
    def population(self) -> AtomicMeasure:
        return combine(self.untreated, self.treated)
