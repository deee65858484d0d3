"""Conversions between bitstrings, 0/1 arrays and integer codes.

The first character of a bitstring is the most significant bit of its code,
so lexicographic order on equal-length bitstrings is numeric order on codes.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

BitsLike = Union[str, Sequence[int], np.ndarray]


def as_bitstring(x: BitsLike) -> str:
    if isinstance(x, str):
        s = x
    else:
        s = "".join("1" if int(v) else "0" for v in x)
    if not s or s.strip("01"):
        raise ValueError(f"not a bitstring: {x!r}")
    return s


def to_array(bits: Iterable[str], p: int | None = None) -> np.ndarray:
    """Stack bitstrings into an (N, p) uint8 array."""
    bits = list(bits)
    if not bits:
        return np.zeros((0, p or 0), dtype=np.uint8)
    raw = np.frombuffer("".join(bits).encode("ascii"), dtype=np.uint8) - ord("0")
    return raw.reshape(len(bits), -1)


def from_array(X: np.ndarray) -> list[str]:
    X = np.asarray(X, dtype=np.uint8)
    if X.ndim == 1:
        X = X[None, :]
    chars = (X + ord("0")).astype(np.uint8)
    return [row.tobytes().decode("ascii") for row in chars]


def encode(X: np.ndarray) -> np.ndarray:
    """Integer codes of the rows of a 0/1 array (requires p <= 62)."""
    X = np.asarray(X, dtype=np.int64)
    p = X.shape[1]
    weights = np.left_shift(np.int64(1), np.arange(p - 1, -1, -1, dtype=np.int64))
    return X @ weights


def decode(codes: np.ndarray, p: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    shifts = np.arange(p - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8)


@lru_cache(maxsize=16)
def _all_states(p: int) -> np.ndarray:
    out = decode(np.arange(2**p, dtype=np.int64), p)
    out.setflags(write=False)
    return out


def all_states(p: int) -> np.ndarray:
    """All 2^p binary vectors in lexicographic order, shape (2^p, p)."""
    return _all_states(p)


def all_bitstrings(p: int) -> list[str]:
    return from_array(all_states(p))
