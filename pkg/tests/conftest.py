import numpy as np
import pytest

from popalloc import _bits
from popalloc.model import Prob, build_spec

# logit magnitude large enough that expit rounds to exactly 0 or 1
HARD = 800.0


def identity_logits(p):
    """Kernel rows that copy each coordinate deterministically."""
    q = np.zeros((p, p + 1))
    q[:, 0] = -HARD
    q[np.arange(p), np.arange(p) + 1] = 2 * HARD
    return q


def const_logits(probs):
    """Kernel rows with P(x'_i = 1 | x) = probs[i] regardless of x."""
    probs = np.asarray(probs, dtype=float)
    p = probs.size
    q = np.zeros((p, p + 1))
    with np.errstate(divide="ignore"):
        q[:, 0] = np.log(probs) - np.log1p(-probs)
    return q


def two_state_logits(p01, p11):
    """p=1 kernel with P(1|0) = p01 and P(1|1) = p11."""
    l0 = np.log(p01 / (1 - p01))
    l1 = np.log(p11 / (1 - p11))
    return np.array([[l0, l1 - l0]])


def make_spec(
    p=1,
    reward0=None,
    reward1=None,
    q0=None,
    q1=None,
    pd0=0.0,
    pd1=0.0,
    p0=0.0,
    inflow=None,
    bases=None,
):
    reward0 = np.r_[80.0, np.zeros(p)] if reward0 is None else reward0
    reward1 = np.r_[90.0, np.zeros(p)] if reward1 is None else reward1
    q0 = identity_logits(p) if q0 is None else q0
    q1 = identity_logits(p) if q1 is None else q1
    inflow = [("0" * p, 1.0)] if inflow is None else inflow
    bases = np.eye(p + 1)[1:2] if bases is None else bases
    return build_spec(
        p=p,
        reward0=reward0,
        reward1=reward1,
        q0_logits=q0,
        q1_logits=q1,
        pd0=pd0 if isinstance(pd0, Prob) else Prob(const=float(pd0)),
        pd1=pd1 if isinstance(pd1, Prob) else Prob(const=float(pd1)),
        p0=p0 if isinstance(p0, Prob) else Prob(const=float(p0)),
        inflow=inflow,
        bases=bases,
    )


def random_probability(rng, p, n_atoms=None):
    from popalloc.measures import AtomicMeasure

    keys = _bits.all_bitstrings(p)
    n_atoms = n_atoms or rng.integers(1, min(len(keys), 12) + 1)
    pick = rng.choice(len(keys), size=n_atoms, replace=False)
    w = rng.dirichlet(np.ones(n_atoms))
    return AtomicMeasure((keys[i], v) for i, v in zip(pick, w))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
