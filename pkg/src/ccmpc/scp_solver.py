"""Inner SCP loop for fixed error bounds.

Each iteration linearizes the problem at the current iterate, solves the
resulting LP, and shrinks the trust region geometrically.  The LP is solved
in a shifted form ``u = lo + v`` where ``lo``/``hi`` come from the single
variable rows (control box and trust region); safety and state rows carry
nonnegative exact-penalty slacks so the LP is always feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import docp
from .docp import DocpContext, LocpProblem
from .simplex import OPTIMAL, LPError, solve_lp

FEAS_TOL = 1e-6
FIXED_POINT_TOL = 1e-9


@dataclass(frozen=True)
class ScpConfig:
    delta0: float = 0.5
    beta: float = 0.8
    eps_tol: float = 1e-3
    max_inner_iters: int = 20
    slack_penalty: float = 1e4
    # keep iterating past eps_tol until the step is this small (finite termination
    # of the LP active set); counted against max_inner_iters
    polish_tol: float = FIXED_POINT_TOL

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must be in (0, 1)")
        if not (self.delta0 > 0 and self.eps_tol > 0):
            raise ValueError("delta0 and eps_tol must be > 0")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")


@dataclass
class LocpSolution:
    u: np.ndarray
    status: str
    objective: float
    slack: float               # sum of penalty slacks
    duals: np.ndarray          # one multiplier per row of the LocpProblem
    epi_duals: np.ndarray      # (2, T): multipliers of +(du) <= t and -(du) <= t
    t_duals: np.ndarray        # (T,): multipliers of t >= 0
    pivots: int


@dataclass
class ScpReport:
    iterations: int = 0
    step_norm: float = math.inf
    max_violation: float = math.inf
    objectives: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    converged: bool = False
    slack_used: bool = False
    problem: Optional[LocpProblem] = None
    solution: Optional[LocpSolution] = None

    def trace(self) -> list:
        return [{"iteration": i + 1, "objective": o, "step": s, "radius": r}
                for i, (o, s, r) in enumerate(zip(self.objectives, self.steps, self.radii))]


def solve_locp(p: LocpProblem, slack_penalty: float = 1e4) -> LocpSolution:
    """Solve one linear subproblem exactly (see module docstring)."""
    T = p.T
    A, b = p.A, p.b
    nnz = np.count_nonzero(A, axis=1)
    single = nnz == 1
    lo = np.full(T, -math.inf)
    hi = np.full(T, math.inf)
    lo_row = np.full(T, -1)
    hi_row = np.full(T, -1)
    for i in np.flatnonzero(single):
        j = int(np.flatnonzero(A[i])[0])
        v = b[i] / A[i, j]
        if A[i, j] > 0 and v < hi[j]:
            hi[j], hi_row[j] = v, i
        elif A[i, j] < 0 and v > lo[j]:
            lo[j], lo_row[j] = v, i
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise LPError("every control needs finite lower and upper bounds")
    if np.any(lo > hi + 1e-12):
        raise LPError("control box and trust region do not intersect")
    hi = np.maximum(hi, lo)
    width = hi - lo

    multi = np.flatnonzero(~single & (nnz > 0))
    Am = A[multi]
    rhs = b[multi] - Am @ lo
    # rows implied by the box never bind
    keep = (np.clip(Am, 0, None) @ width) > rhs - 1e-12
    multi, Am, rhs = multi[keep], Am[keep], rhs[keep]
    n_m = len(multi)

    w = p.smooth_weight
    use_t = w > 0
    n_t = T if use_t else 0
    n = T + n_t + n_m
    rows, rb = [], []
    # multi-variable rows with penalty slack: a.v - s <= rhs
    blk = np.zeros((n_m, n))
    blk[:, :T] = Am
    blk[np.arange(n_m), T + n_t + np.arange(n_m)] = -1.0
    rows.append(blk)
    rb.append(rhs)
    if use_t:
        D = np.eye(T) - np.eye(T, k=-1)  # (D u)_k = u_k - u_{k-1}
        lo_prev = np.concatenate([[p.last_u], lo[:-1]])
        off = lo - lo_prev  # D lo with u_{-1} folded in
        E = np.zeros((2 * T, n))
        E[:T, :T] = D
        E[T:, :T] = -D
        E[:T, T:2 * T] = -np.eye(T)
        E[T:, T:2 * T] = -np.eye(T)
        rows.append(E)
        rb.append(np.concatenate([-off, off]))
    U = np.zeros((T, n))
    U[:, :T] = np.eye(T)
    rows.append(U)
    rb.append(width)
    Aall = np.vstack(rows)
    ball = np.concatenate(rb)
    cost = np.concatenate([p.c, np.full(n_t, w), np.full(n_m, slack_penalty)])
    res = solve_lp(cost, Aall, ball)
    if res.status != OPTIMAL:
        raise LPError(f"LOCP solve failed: {res.status}")

    v = res.x[:T]
    u = np.clip(lo + v, lo, hi)
    slack = float(res.x[T + n_t:].sum())
    duals = np.zeros(len(b))
    duals[multi] = res.duals[:n_m]
    ub_duals = res.duals[n_m + 2 * n_t:]
    lb_duals = res.reduced_costs[:T]
    for j in range(T):
        duals[hi_row[j]] += ub_duals[j]
        duals[lo_row[j]] += lb_duals[j]
    epi = res.duals[n_m:n_m + 2 * n_t].reshape(2, T) if use_t else np.zeros((2, T))
    t_duals = res.reduced_costs[T:T + n_t] if use_t else np.zeros(T)
    return LocpSolution(u, res.status, p.objective(u), slack, duals, epi, t_duals, res.pivots)


def scp_inner(ctx: DocpContext, bounds: np.ndarray, u_init: np.ndarray, cfg: ScpConfig = ScpConfig(),
              delta0: Optional[float] = None):
    """Sequential convex programming for fixed bounds.

    Returns ``(u_star, report)``.  ``report.converged`` requires the step
    test, nonlinear feasibility within ``FEAS_TOL`` and no penalty slack.
    """
    u = np.clip(np.asarray(u_init, dtype=float), 0.0, ctx.u_max)
    radius = cfg.delta0 if delta0 is None else delta0
    rep = ScpReport()
    reached_tol = False
    for j in range(cfg.max_inner_iters):
        prob = docp.linearize_problem(ctx, u, bounds, radius)
        sol = solve_locp(prob, cfg.slack_penalty)
        step = float(np.max(np.abs(sol.u - u)))
        rep.iterations = j + 1
        rep.objectives.append(ctx.cost.value(sol.u, ctx.vehicle.last_u))
        rep.steps.append(step)
        rep.radii.append(radius)
        rep.problem, rep.solution = prob, sol
        u = sol.u
        radius *= cfg.beta
        reached_tol = reached_tol or step <= cfg.eps_tol
        if step <= cfg.polish_tol:
            break
    rep.step_norm = rep.steps[-1]
    rep.slack_used = rep.solution.slack > 1e-9
    rep.max_violation = docp.evaluate_feasibility(ctx, u, bounds)
    rep.converged = (reached_tol and rep.step_norm <= cfg.eps_tol
                     and rep.max_violation <= FEAS_TOL and not rep.slack_used)
    return u, rep


@dataclass
class KktResiduals:
    stationarity: float
    complementarity: float
    dual_feasibility: float
    primal_violation: float
    trust_multiplier: float


def kkt_residuals(ctx: DocpContext, bounds: np.ndarray, u: np.ndarray, rep: ScpReport) -> KktResiduals:
    """KKT residuals of the nonlinear problem at ``u`` using the final LP multipliers.

    The problem is re-linearized at ``u`` and lifted to ``(u, t)`` with the
    smoothness epigraph.  Trust-region multipliers are dropped, since the
    trust region is not part of the nonlinear problem.
    """
    sol = rep.solution
    T = ctx.T
    p = docp.linearize_problem(ctx, u, bounds, 1.0)
    trust = np.array([k in (docp.TRUST_UB, docp.TRUST_LB) for k in p.kinds])
    lam = np.where(trust, 0.0, sol.duals)
    mu_p, mu_m = sol.epi_duals
    w = p.smooth_weight
    D = np.eye(T) - np.eye(T, k=-1)
    grad_u = p.c + p.A.T @ lam + D.T @ (mu_p - mu_m)
    nu = sol.t_duals
    grad_t = (np.full(T, w) - mu_p - mu_m - nu) if w > 0 else np.zeros(T)
    # constraint values g(u) <= 0 of the nonlinear problem
    g = p.A @ u - p.b
    if ctx.M:
        g[: ctx.M * T] = docp.safety_margins(ctx, u, bounds).reshape(-1)
    du = D @ u - np.concatenate([[ctx.vehicle.last_u], np.zeros(T - 1)])
    t = np.abs(du)
    g_epi = np.concatenate([du - t, -du - t])
    comp = np.concatenate([np.abs(lam * g)[~trust], np.abs(np.concatenate([mu_p, mu_m]) * g_epi),
                           np.abs(nu * t)])
    return KktResiduals(
        stationarity=float(max(np.max(np.abs(grad_u)), np.max(np.abs(grad_t)))),
        complementarity=float(comp.max()) if comp.size else 0.0,
        dual_feasibility=float(max(0.0, -np.min(np.concatenate([lam, mu_p, mu_m, nu])))),
        primal_violation=float(max(0.0, np.max(g[~trust]))),
        trust_multiplier=float(np.max(np.abs(sol.duals[trust]))) if trust.any() else 0.0,
    )
