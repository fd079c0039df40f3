"""Dense two-phase tableau simplex with Bland's rule.

Solves ``min c.x  s.t.  A x <= b, x >= 0``.  Problems here are tiny (tens of
rows), so robustness and determinism matter more than speed.  After the
pivoting terminates the final basis is refactorized once to get accurate
primal values and duals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray          # lambda >= 0 for every row of A x <= b
    reduced_costs: np.ndarray  # c + A^T lambda (>= 0, multiplier of x >= 0)
    pivots: int
    basis: np.ndarray


def _pivot(tab: np.ndarray, basis: np.ndarray, r: int, j: int) -> None:
    row = tab[r] / tab[r, j]
    tab -= np.outer(tab[:, j], row)
    tab[r] = row
    basis[r] = j


def _run(tab: np.ndarray, basis: np.ndarray, n_cols: int, tol: float, max_pivots: int):
    """Pivot on ``tab`` (last row = reduced costs, last column = rhs)."""
    pivots = 0
    m = tab.shape[0] - 1
    while True:
        cost = tab[-1, :n_cols]
        cand = np.flatnonzero(cost < -tol)
        if cand.size == 0:
            return OPTIMAL, pivots
        j = int(cand[0])
        col = tab[:m, j]
        pos = np.flatnonzero(col > tol)
        if pos.size == 0:
            return UNBOUNDED, pivots
        ratios = tab[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        r = int(ties[np.argmin(basis[ties])])
        _pivot(tab, basis, r, j)
        pivots += 1
        if pivots >= max_pivots:
            return ITERATION_LIMIT, pivots


def solve_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray, tol: float = 1e-10,
             max_pivots: int = 5000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, len(c))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    neg = b < 0
    n_art = int(neg.sum())
    n_cols = n + m + n_art
    tab = np.zeros((m + 1, n_cols + 1))
    sign = np.where(neg, -1.0, 1.0)
    tab[:m, :n] = A * sign[:, None]
    tab[:m, n:n + m] = np.diag(sign)
    tab[:m, -1] = b * sign
    basis = np.arange(n, n + m)
    art_rows = np.flatnonzero(neg)
    for a, r in enumerate(art_rows):
        tab[r, n + m + a] = 1.0
        basis[r] = n + m + a
    pivots = 0
    if n_art:
        # phase 1: minimize the sum of artificials
        tab[-1, :] = 0.0
        tab[-1, n + m:n_cols] = 1.0
        tab[-1] -= tab[art_rows].sum(axis=0)
        status, p = _run(tab, basis, n_cols, tol, max_pivots)
        pivots += p
        if status != OPTIMAL:
            raise LPError(f"phase 1 ended with {status}")
        if -tab[-1, -1] > 1e-8 * max(1.0, np.abs(b).max()):
            return LPResult(INFEASIBLE, np.full(n, np.nan), np.nan, np.full(m, np.nan),
                            np.full(n, np.nan), pivots, basis)
        # drive remaining zero-level artificials out of the basis
        for r in np.flatnonzero(basis >= n + m):
            cand = np.flatnonzero(np.abs(tab[r, :n + m]) > 1e-9)
            if cand.size:
                _pivot(tab, basis, r, int(cand[0]))
        keep = basis < n + m
        tab = np.vstack([tab[:m][keep], tab[-1:]])
        basis = basis[keep]
        tab = np.delete(tab, np.s_[n + m:n_cols], axis=1)
    # phase 2
    cfull = np.concatenate([c, np.zeros(m)])
    tab[-1, :] = 0.0
    tab[-1, :n + m] = cfull
    tab[-1] -= cfull[basis] @ tab[:-1]
    status, p = _run(tab, basis, n + m, tol, max_pivots - pivots)
    pivots += p
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, np.full(n, np.nan), -np.inf, np.full(m, np.nan),
                        np.full(n, np.nan), pivots, basis)
    if status != OPTIMAL:
        raise LPError(f"phase 2 ended with {status} after {pivots} pivots")
    return _refactor(c, A, b, basis, pivots)


def _refactor(c, A, b, basis, pivots) -> LPResult:
    m, n = A.shape
    full = np.hstack([A, np.eye(m)])
    cfull = np.concatenate([c, np.zeros(m)])
    if len(basis) < m:
        # redundant equality rows were dropped; complete the basis with slacks
        extra = [j for j in range(n, n + m) if j not in set(basis)]
        for j in extra:
            trial = np.append(basis, j)
            if np.linalg.matrix_rank(full[:, trial]) == len(trial):
                basis = trial
            if len(basis) == m:
                break
    B = full[:, basis]
    z = np.zeros(n + m)
    z[basis] = np.linalg.solve(B, b)
    z[basis] = np.maximum(z[basis], 0.0)
    pi = np.linalg.solve(B.T, cfull[basis])
    duals = np.maximum(-pi, 0.0)
    rc = c + A.T @ duals
    rc[np.abs(rc) < 1e-13] = 0.0
    x = z[:n]
    return LPResult(OPTIMAL, x, float(c @ x), duals, rc, pivots, basis)
