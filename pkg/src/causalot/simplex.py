"""Dense revised simplex for equality-form linear programs.

Solves ``min c.x  s.t.  A x = b, x >= 0`` with a two-phase method, an explicit
basis inverse maintained by product-form updates and periodically
refactorized, partial Dantzig pricing, and Bland's rule as an anti-cycling
fallback after a run of degenerate pivots.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

FEAS_TOL = 1e-9
COST_TOL = 1e-10
PIVOT_TOL = 1e-9
WEAK_PIVOT = 1e-7


class SolverError(RuntimeError):
    """Raised when a result fails its own consistency checks."""


@dataclass
class LPProblem:
    """``min c.x`` subject to ``A x = b``, ``x >= 0``; ``A`` dense or CSC triple."""

    c: np.ndarray
    A: object
    b: np.ndarray
    row_tags: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if isinstance(self.A, np.ndarray):
            self.A = dense_to_csc(self.A)
        colptr, rowind, vals, shape = self.A
        self.A = (
            np.ascontiguousarray(colptr, dtype=np.int64),
            np.ascontiguousarray(rowind, dtype=np.int64),
            np.ascontiguousarray(vals, dtype=float),
            tuple(shape),
        )
        if shape != (len(self.b), len(self.c)):
            raise ValueError(f"constraint matrix shape {shape} does not match b/c")

    @property
    def shape(self):
        return self.A[3]

    def dense(self) -> np.ndarray:
        colptr, rowind, vals, (m, n) = self.A
        out = np.zeros((m, n))
        cols = np.repeat(np.arange(n), np.diff(colptr))
        np.add.at(out, (rowind, cols), vals)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        colptr, rowind, vals, (m, n) = self.A
        cols = np.repeat(np.arange(n), np.diff(colptr))
        return np.bincount(rowind, weights=vals * x[cols], minlength=m)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        colptr, rowind, vals, (m, n) = self.A
        cols = np.repeat(np.arange(n), np.diff(colptr))
        return np.bincount(cols, weights=vals * y[rowind], minlength=n)


@dataclass
class LPSolution:
    status: str
    value: float
    x: np.ndarray
    y: np.ndarray
    iterations: int
    dual_value: float = float("nan")
    primal_residual: float = float("nan")
    min_reduced_cost: float = float("nan")
    problem: LPProblem | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def duality_gap(self) -> float:
        return abs(self.value - self.dual_value)


def dense_to_csc(A: np.ndarray):
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    rows, cols = np.nonzero(A.T)
    # np.nonzero on A.T walks column by column of A
    rowind = cols
    colidx = rows
    vals = A[rowind, colidx]
    colptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(colptr, colidx + 1, 1)
    return np.cumsum(colptr), rowind, vals, (m, n)


def coo_to_csc(rows, cols, vals, shape):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    colptr = np.zeros(shape[1] + 1, dtype=np.int64)
    np.add.at(colptr, cols + 1, 1)
    return np.cumsum(colptr), rows, vals, tuple(shape)


class _Tableau:
    """Basis bookkeeping shared by both phases."""

    def __init__(self, colptr, rowind, vals, m, n_total, b, basis):
        self.colptr, self.rowind, self.vals = colptr, rowind, vals
        self.m = m
        self.b = b
        self.basis = np.asarray(basis, dtype=np.int64)
        # refactorization costs O(m^3), the updates O(m^2) each
        self.period = max(100, m // 4)
        self.refactor()

    def column(self, j):
        lo, hi = self.colptr[j], self.colptr[j + 1]
        return self.rowind[lo:hi], self.vals[lo:hi]

    def refactor(self):
        B = np.zeros((self.m, self.m))
        for i, j in enumerate(self.basis):
            r, v = self.column(j)
            B[r, i] = v
        self.binv = np.ascontiguousarray(np.linalg.inv(B))
        self.xb = self.binv @ self.b
        self.since_refactor = 0

    def ftran(self, j):
        r, v = self.column(j)
        return np.ascontiguousarray(self.binv[:, r] @ v)

    def pivot(self, r, j, d):
        theta = max(self.xb[r], 0.0) / d[r]
        self.xb -= theta * d
        self.xb[r] = theta
        kernels.eta_update(self.binv, d, r)
        self.basis[r] = j
        self.since_refactor += 1
        if self.since_refactor >= self.period:
            self.refactor()


def _price(tab, cost, y, eligible, bland, start, block):
    n_total = len(cost)
    if bland:
        return kernels.price(tab.colptr, tab.rowind, tab.vals, cost, y, eligible, 0, n_total, COST_TOL, True)
    # partial pricing: scan blocks cyclically, stop at the first block with a candidate
    scanned = 0
    while scanned < n_total:
        end = min(start + block, n_total)
        j, dj = kernels.price(tab.colptr, tab.rowind, tab.vals, cost, y, eligible, start, end, COST_TOL, False)
        scanned += end - start
        start = 0 if end >= n_total else end
        if j >= 0:
            return j, dj
    return -1, 0.0


def _run_phase(tab, cost, eligible, max_iter, block):
    """Iterate until optimal or unbounded; returns (status, iterations)."""
    n_total = len(cost)
    iters = 0
    degenerate_run = 0
    bland = False
    start = 0
    y = None
    while iters < max_iter:
        fresh = y is None or tab.since_refactor == 0
        if fresh:
            y = tab.binv.T @ cost[tab.basis]
        j, dj = _price(tab, cost, y, eligible, bland, start, block)
        if j < 0 and not fresh:
            # confirm optimality with exactly recomputed duals
            y = tab.binv.T @ cost[tab.basis]
            j, dj = _price(tab, cost, y, eligible, bland, start, block)
        if j < 0:
            return "optimal", iters
        start = j + 1 if j + 1 < n_total else 0
        d = tab.ftran(j)
        # pivot tolerance relative to the column, tiny pivots ruin the basis inverse
        piv_tol = PIVOT_TOL * max(1.0, float(np.abs(d).max()))
        r = kernels.ratio_test(tab.xb, d, tab.basis, piv_tol, bland)
        if r >= 0 and d[r] < WEAK_PIVOT * np.abs(d).max() and tab.since_refactor:
            # weak pivot: refresh the inverse and price again before committing
            tab.refactor()
            continue
        if r < 0:
            return "unbounded", iters
        if max(tab.xb[r], 0.0) / d[r] <= FEAS_TOL:
            degenerate_run += 1
            if degenerate_run > 50:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        tab.pivot(r, j, d)
        if tab.since_refactor:
            # duals move along the new row of the basis inverse
            y += dj * tab.binv[r]
        iters += 1
    raise SolverError(f"iteration limit {max_iter} reached")


def independent_rows(problem: LPProblem, rel_tol: float = 1e-9) -> np.ndarray:
    """Row indices of a maximal linearly independent subset (pivoted QR of ``A^T``)."""
    from scipy.linalg import qr

    A = problem.dense()
    R, piv = qr(A.T, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if len(diag) == 0 or diag[0] == 0.0:
        return np.zeros(0, dtype=np.int64)
    rank = int(np.sum(diag > rel_tol * diag[0]))
    return np.sort(piv[:rank])


def solve_lp(problem: LPProblem, max_iter: int | None = None, presolve: bool = True) -> LPSolution:
    """Two-phase revised simplex.

    With ``presolve``, linearly dependent equality rows are dropped first (their
    duals are zero); the returned residuals are measured on the full system.
    """
    m_full = problem.shape[0]
    if presolve and m_full > 64:
        keep = independent_rows(problem)
        if len(keep) < m_full:
            A = problem.dense()[keep]
            sub = LPProblem(problem.c, A, problem.b[keep])
            sol = solve_lp(sub, max_iter, presolve=False)
            y = np.zeros(m_full)
            if len(sol.y):
                y[keep] = sol.y
            sol.y = y
            sol.problem = problem
            if sol.status == "optimal":
                sol.primal_residual = float(np.abs(problem.matvec(sol.x) - problem.b).max())
                sol.dual_value = float(problem.b @ y)
                sol.min_reduced_cost = float((problem.c - problem.rmatvec(y)).min())
                if sol.primal_residual > 1e-7:
                    raise SolverError("dropped rows are not implied by the kept ones")
            return sol
    colptr, rowind, vals, (m, n) = problem.A
    c = problem.c
    b = problem.b.copy()
    sign = np.where(b < 0, -1.0, 1.0)
    b *= sign
    vals = vals * sign[rowind]
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    if m == 0:
        if np.any(c < -COST_TOL):
            return LPSolution("unbounded", -np.inf, np.zeros(n), np.zeros(0), 0, problem=problem)
        return LPSolution("optimal", 0.0, np.zeros(n), np.zeros(0), 0, 0.0, 0.0, float(c.min(initial=0.0)), problem)

    # append one artificial column per row
    colptr_a = np.concatenate([colptr, colptr[-1] + 1 + np.arange(m)])
    rowind_a = np.concatenate([rowind, np.arange(m)])
    vals_a = np.concatenate([vals, np.ones(m)])
    n_total = n + m
    tab = _Tableau(colptr_a, rowind_a, vals_a, m, n_total, b, np.arange(n, n + m))
    block = max(64, n_total // 8)

    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    eligible = np.ones(n_total, dtype=np.uint8)
    status, it1 = _run_phase(tab, cost1, eligible, max_iter, block)
    tab.refactor()
    infeas = float(tab.xb[tab.basis >= n].sum())
    if infeas > FEAS_TOL * (1.0 + np.abs(b).max()):
        return LPSolution("infeasible", np.nan, np.zeros(n), np.zeros(m), it1, problem=problem)

    # drive basic artificials out where a structural column can replace them
    eligible[n:] = 0
    for r in np.flatnonzero(tab.basis >= n):
        row = tab.binv[r]
        cols = np.repeat(np.arange(n_total), np.diff(colptr_a))
        alpha = np.bincount(cols, weights=row[rowind_a] * vals_a, minlength=n_total)[:n]
        alpha[tab.basis[tab.basis < n]] = 0.0
        cand = np.flatnonzero(np.abs(alpha) > 1e-7)
        if len(cand):
            j = int(cand[np.argmax(np.abs(alpha[cand]))])
            d = tab.ftran(j)
            tab.xb[r] = 0.0
            tab.pivot(r, j, d)
    tab.refactor()

    cost2 = np.concatenate([c, np.zeros(m)])
    status, it2 = _run_phase(tab, cost2, eligible, max_iter, block)
    iters = it1 + it2
    if status == "unbounded":
        return LPSolution("unbounded", -np.inf, np.zeros(n), np.zeros(m), iters, problem=problem)
    tab.refactor()
    x = np.zeros(n_total)
    x[tab.basis] = tab.xb
    x = np.maximum(x, 0.0)
    y_flipped = tab.binv.T @ cost2[tab.basis]
    y = y_flipped * sign
    xs = x[:n]
    value = float(c @ xs)
    sol = LPSolution(
        status="optimal",
        value=value,
        x=xs,
        y=y,
        iterations=iters,
        dual_value=float(problem.b @ y),
        primal_residual=float(np.abs(problem.matvec(xs) - problem.b).max()),
        min_reduced_cost=float((c - problem.rmatvec(y)).min()),
        problem=problem,
    )
    if np.any(x[n:] > FEAS_TOL):
        raise SolverError("artificial variable left positive at optimum")
    return sol
