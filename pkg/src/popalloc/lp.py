"""Dense two-phase tableau simplex for small linear programs.

Problems are ``min c.x`` subject to rows ``a.x (>=|<=|=) b`` with each
variable either nonnegative or free.  Dual values follow the minimization
convention: ``>=`` rows have nonnegative duals, ``<=`` rows nonpositive,
``=`` rows free, and at an optimum ``c.x == b.y``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .errors import NumericalFailure

FEAS_TOL = 1e-8
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
BLAND_AFTER = 50

GE, LE, EQ = ">=", "<=", "="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    senses: list[str]
    rhs: np.ndarray
    free: np.ndarray = field(default=None)  # bool mask, True = unbounded below

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        if self.free is None:
            self.free = np.zeros(n, dtype=bool)
        self.free = np.asarray(self.free, dtype=bool)
        if self.A.shape[0] != self.rhs.size or len(self.senses) != self.rhs.size:
            raise ValueError("row count mismatch between A, senses and rhs")
        if self.free.size != n:
            raise ValueError("free mask must match the number of variables")
        bad = set(self.senses) - {GE, LE, EQ}
        if bad:
            raise ValueError(f"unknown row relation(s): {sorted(bad)}")

    @classmethod
    def from_rows(cls, objective: Sequence[float], rows, free=None) -> "LinearProgram":
        """Build from ``(coefficients, relation, rhs)`` triples."""
        rows = list(rows)
        n = len(objective)
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
        return cls(objective, A, [r[1] for r in rows], [r[2] for r in rows], free)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass
class LPSolution:
    status: Status
    values: np.ndarray | None = None
    objective_value: float | None = None
    dual_values: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Tableau:
    def __init__(self, M: np.ndarray, basis: list[int], log: IO | None):
        self.M = M  # last row is the reduced-cost row, last column the rhs
        self.basis = basis
        self.log = log
        self.iterations = 0

    def pivot(self, r: int, j: int) -> None:
        M = self.M
        piv = M[r, j]
        if abs(piv) < PIVOT_TOL:
            raise NumericalFailure(f"pivot {piv:.3g} below tolerance")
        M[r] /= piv
        col = M[:, j].copy()
        col[r] = 0.0
        M -= np.outer(col, M[r])
        M[r, j] = 1.0
        self.basis[r] = j
        self.iterations += 1
        if self.log is not None:
            self.log.write(f"pivot {self.iterations}: row {r} col {j} obj {-M[-1, -1]:.12g}\n")

    def set_costs(self, cost: np.ndarray) -> None:
        M = self.M
        M[-1, :-1] = cost
        M[-1, -1] = 0.0
        for r, j in enumerate(self.basis):
            if cost[j] != 0.0:
                M[-1] -= cost[j] * M[r]

    def run(self, allowed: np.ndarray, max_iter: int) -> str:
        """Simplex iterations until optimal or unbounded; returns the outcome tag."""
        M = self.M
        m = M.shape[0] - 1
        degenerate = 0
        bland = False
        for _ in range(max_iter):
            d = M[-1, :-1]
            cand = np.flatnonzero(allowed & (d < -OPT_TOL))
            if cand.size == 0:
                return "optimal"
            j = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
            colj = M[:m, j]
            rows = np.flatnonzero(colj > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            ratios = M[rows, -1] / colj[rows]
            best = ratios.min()
            ties = rows[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
            if bland or ties.size > 1:
                r = int(min(ties, key=lambda i: self.basis[i]))
            else:
                r = int(ties[0])
            degenerate = degenerate + 1 if best <= FEAS_TOL else 0
            if degenerate >= BLAND_AFTER:
                bland = True
            self.pivot(r, j)
        raise NumericalFailure(f"simplex did not terminate within {max_iter} pivots")


def solve(lp: LinearProgram, log: IO | None = None) -> LPSolution:
    """Solve ``lp``; deterministic for identical input."""
    n, m = lp.n_vars, lp.n_rows
    # expand free variables into (x+, x-) pairs
    cols = []
    for j in range(n):
        cols.append((j, 1.0))
        if lp.free[j]:
            cols.append((j, -1.0))
    A0 = np.column_stack([lp.A[:, j] * s for j, s in cols]) if m else np.zeros((0, len(cols)))
    c0 = np.array([lp.objective[j] * s for j, s in cols])
    nx = len(cols)

    sign = np.where(lp.rhs < 0, -1.0, 1.0)
    A = A0 * sign[:, None]
    b = lp.rhs * sign
    senses = []
    for s, sg in zip(lp.senses, sign):
        if sg < 0 and s != EQ:
            s = GE if s == LE else LE
        senses.append(s)

    n_slack = sum(1 for s in senses if s != EQ)
    n_art = sum(1 for s in senses if s != LE)
    N = nx + n_slack + n_art
    M = np.zeros((m + 1, N + 1))
    M[:m, :nx] = A
    M[:m, -1] = b
    basis = []
    k_s, k_a = nx, nx + n_slack
    for i, s in enumerate(senses):
        if s == LE:
            M[i, k_s] = 1.0
            basis.append(k_s)
            k_s += 1
        else:
            if s == GE:
                M[i, k_s] = -1.0
                k_s += 1
            M[i, k_a] = 1.0
            basis.append(k_a)
            k_a += 1
    art = np.zeros(N, dtype=bool)
    art[nx + n_slack :] = True
    max_iter = 50 * (N + m + 10)

    tab = _Tableau(M, basis, log)
    if n_art:
        tab.set_costs(art.astype(float))
        tab.run(np.ones(N, dtype=bool), max_iter)
        infeas = -tab.M[-1, -1]
        if infeas > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LPSolution(Status.INFEASIBLE, iterations=tab.iterations)
        # drive remaining artificials out of the basis; drop redundant rows
        keep = []
        for r in range(m):
            if art[tab.basis[r]]:
                row = tab.M[r, :N]
                nonart = np.flatnonzero(~art & (np.abs(row) > 1e-9))
                if nonart.size:
                    tab.pivot(r, int(nonart[np.argmax(np.abs(row[nonart]))]))
                    keep.append(r)
            else:
                keep.append(r)
        if len(keep) < m:
            tab.M = tab.M[keep + [m]]
            tab.basis = [tab.basis[r] for r in keep]
    else:
        keep = list(range(m))

    cost = np.zeros(N)
    cost[:nx] = c0
    tab.set_costs(cost)
    outcome = tab.run(~art, max_iter)
    if outcome == "unbounded":
        return LPSolution(Status.UNBOUNDED, iterations=tab.iterations)

    # recover a clean basic solution and duals from the original columns
    full = np.zeros((m, N))
    full[:, :nx] = A
    full[:, nx:] = _slack_art_block(senses, n_slack, n_art)
    B = full[np.ix_(keep, tab.basis)]
    xB_tab = tab.M[:-1, -1].copy()
    y_tab = _tableau_duals(tab.M[-1, :N], cost, senses, n_slack, keep, nx)
    try:
        xB = np.linalg.solve(B, b[keep])
        y_keep = np.linalg.solve(B.T, cost[tab.basis])
        if not (np.all(np.isfinite(xB)) and np.all(np.isfinite(y_keep))):
            raise np.linalg.LinAlgError("non-finite solve")
    except np.linalg.LinAlgError:
        xB, y_keep = xB_tab, y_tab
    # an ill-conditioned basis can make the re-solve worse than the tableau itself
    if _violation(full[keep], b[keep], tab.basis, xB) > _violation(full[keep], b[keep], tab.basis, xB_tab):
        xB, y_keep = xB_tab, y_tab
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if _violation(full[keep], b[keep], tab.basis, xB) > FEAS_TOL * scale:
        raise NumericalFailure("basic solution violates the constraints beyond tolerance")
    xs = np.zeros(N)
    xs[tab.basis] = xB
    # every expanded column is nonnegative; clear round-off below the feasibility tolerance
    xs[(xs < 0.0) & (xs > -FEAS_TOL)] = 0.0
    x = np.zeros(n)
    for k, (j, s) in enumerate(cols):
        x[j] += s * xs[k]
    y = np.zeros(m)
    y[keep] = y_keep * sign[keep]
    return LPSolution(Status.OPTIMAL, x, float(lp.objective @ x), y, tab.iterations)


def _violation(Akeep: np.ndarray, bkeep: np.ndarray, basis: list[int], xB: np.ndarray) -> float:
    """Max of row residual and negativity for a basic solution in the expanded space."""
    if xB.size == 0:
        return float(np.abs(bkeep).max(initial=0.0))
    row = np.abs(Akeep[:, basis] @ xB - bkeep).max(initial=0.0)
    return float(max(row, -xB.min()))


def _tableau_duals(reduced, cost, senses, n_slack, keep, nx) -> np.ndarray:
    """Row prices read off the reduced costs of each row's initial identity column."""
    y = np.zeros(len(senses))
    k_s, k_a = nx, nx + n_slack
    for i, s in enumerate(senses):
        if s == LE:
            y[i] = cost[k_s] - reduced[k_s]
            k_s += 1
        else:
            if s == GE:
                k_s += 1
            y[i] = cost[k_a] - reduced[k_a]
            k_a += 1
    return y[keep]


def _slack_art_block(senses: list[str], n_slack: int, n_art: int) -> np.ndarray:
    block = np.zeros((len(senses), n_slack + n_art))
    k_s, k_a = 0, n_slack
    for i, s in enumerate(senses):
        if s == LE:
            block[i, k_s] = 1.0
            k_s += 1
        else:
            if s == GE:
                block[i, k_s] = -1.0
                k_s += 1
            block[i, k_a] = 1.0
            k_a += 1
    return block


def residuals(lp: LinearProgram, sol: LPSolution) -> tuple[float, float]:
    """(max primal row violation, max complementary-slackness product)."""
    ax = lp.A @ sol.values
    viol = np.zeros(lp.n_rows)
    slack = ax - lp.rhs
    for i, s in enumerate(lp.senses):
        if s == GE:
            viol[i] = max(0.0, -slack[i])
        elif s == LE:
            viol[i] = max(0.0, slack[i])
        else:
            viol[i] = abs(slack[i])
    cs = np.abs(slack * sol.dual_values)
    bound = np.where(lp.free, 0.0, np.maximum(0.0, -sol.values))
    return float(max(viol.max(initial=0.0), bound.max(initial=0.0))), float(cs.max(initial=0.0))
