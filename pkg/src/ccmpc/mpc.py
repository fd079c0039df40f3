"""Outer loop: bound refinement around the inner SCP, and the closed-loop policy.

Each outer iteration solves the inner problem with the bounds retrieved for
the previous plan, then re-retrieves bounds for the new plan.  A plan that is
infeasible under its own bounds is rejected in favour of the previous one;
when the bounds did not shrink anywhere the current plan is already a KKT
point of the next subproblem and the loop can stop early.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import conformal, docp
from .docp import DocpContext, InfeasibleBounds
from .scp_solver import FEAS_TOL, ScpConfig, scp_inner
from .sim_env import EpisodeLog, WorldState

SHORTCUT = "shortcut"
REJECTED = "rejected"
OUTER_CONVERGED = "outer_converged"
EXHAUSTED = "exhausted"
FAILSAFE = "failsafe"


@dataclass(frozen=True)
class OuterConfig:
    max_outer_iters: int = 10
    beta_prime: float = 0.9
    shortcut: bool = True

    def __post_init__(self):
        if not 0 < self.beta_prime < 1:
            raise ValueError("beta_prime must be in (0, 1)")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass
class MpcStepReport:
    outer_iterations: int = 0
    shortcut_taken: bool = False
    rejected: bool = False
    failsafe: bool = False
    termination: str = ""
    bound_profiles: list = field(default_factory=list)   # (M, T) arrays, one per retrieval
    regions: list = field(default_factory=list)
    inner: list = field(default_factory=list)            # ScpReport per outer iteration
    inner_bounds: list = field(default_factory=list)     # bounds each inner call was solved with
    inner_outputs: list = field(default_factory=list)
    wall_time: float = 0.0

    def summary(self) -> dict:
        return {
            "outer_iterations": self.outer_iterations,
            "shortcut": self.shortcut_taken,
            "rejected": self.rejected,
            "failsafe": self.failsafe,
            "termination": self.termination,
            "inner_iterations": [r.iterations for r in self.inner],
            "inner_converged": [r.converged for r in self.inner],
        }


def bounds_nondecreasing(old: np.ndarray, new: np.ndarray) -> bool:
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    if old.shape != new.shape:
        raise ValueError(f"profile shapes differ: {old.shape} vs {new.shape}")
    return bool(np.all(new >= old))


def retrieve_bounds(ctx: DocpContext, table: conformal.BoundTable, u: np.ndarray):
    """Per-pedestrian bound profiles ``(M, T)`` for plan ``u``."""
    if ctx.M == 0:
        return np.zeros((0, ctx.T)), np.zeros((0, 2), dtype=int)
    return conformal.lookup_batch(table, ctx.batch(u))


def _feasibility(ctx: DocpContext, u: np.ndarray, bounds: np.ndarray) -> float:
    if not np.all(np.isfinite(bounds)):
        return math.inf
    return docp.evaluate_feasibility(ctx, u, bounds)


def mpc_step(ctx: DocpContext, table: conformal.BoundTable, cfg_inner: ScpConfig = ScpConfig(),
             cfg_outer: OuterConfig = OuterConfig(), u_warm: Optional[np.ndarray] = None):
    """One receding-horizon solve.  Returns ``(u_star, MpcStepReport)``."""
    t0 = time.perf_counter()
    T = ctx.T
    zeros = np.zeros(T)
    rep = MpcStepReport()

    # the starting plan must satisfy its own bounds; zero speed is the fallback
    u_acc, B = None, None
    for cand in ([] if u_warm is None else [np.asarray(u_warm, dtype=float)]) + [zeros]:
        Bc, regs = retrieve_bounds(ctx, table, cand)
        rep.bound_profiles.append(Bc)
        rep.regions.append(regs)
        if _feasibility(ctx, cand, Bc) <= FEAS_TOL:
            u_acc, B = cand.copy(), Bc
            break
    if u_acc is None:
        Bz = rep.bound_profiles[-1]
        if not np.all(np.isfinite(Bz)):
            return _finish(rep, zeros, FAILSAFE, t0)
        # no certified plan: still try to plan out of the unsafe state from zero speed
        start, B = zeros, Bz
    else:
        start = u_acc

    delta0 = cfg_inner.delta0
    u_prev_out = None
    for ell in range(cfg_outer.max_outer_iters):
        try:
            u_star, inner = scp_inner(ctx, B, start, cfg_inner, delta0)
        except InfeasibleBounds:
            break
        rep.outer_iterations += 1
        rep.inner.append(inner)
        rep.inner_bounds.append(B)
        rep.inner_outputs.append(u_star.copy())
        B_new, regs = retrieve_bounds(ctx, table, u_star)
        rep.bound_profiles.append(B_new)
        rep.regions.append(regs)
        if _feasibility(ctx, u_star, B_new) > FEAS_TOL:
            if u_acc is None:
                return _finish(rep, zeros, FAILSAFE, t0, rejected=True)
            return _finish(rep, u_acc, REJECTED, t0, rejected=True)
        if cfg_outer.shortcut and inner.converged and bounds_nondecreasing(B, B_new):
            rep.shortcut_taken = True
            return _finish(rep, u_star, SHORTCUT, t0)
        if u_prev_out is not None and np.max(np.abs(u_star - u_prev_out)) <= cfg_inner.eps_tol:
            return _finish(rep, u_prev_out, OUTER_CONVERGED, t0)
        u_acc = u_prev_out = u_star
        start, B = u_star, B_new
        delta0 *= cfg_outer.beta_prime
    if u_acc is None:
        return _finish(rep, zeros, FAILSAFE, t0, rejected=True)
    return _finish(rep, u_acc, EXHAUSTED, t0)


def _finish(rep: MpcStepReport, u: np.ndarray, how: str, t0: float, rejected: bool = False):
    rep.termination = how
    rep.rejected = rejected
    rep.failsafe = how == FAILSAFE
    rep.wall_time = time.perf_counter() - t0
    return np.asarray(u, dtype=float).copy(), rep


def shift_and_hold(u: np.ndarray) -> np.ndarray:
    return np.concatenate([u[1:], u[-1:]])


class MpcPolicy:
    """Closed-loop controller: solve, apply the first displacement, warm-start.

    ``audit(ctx, u, report)`` is called after every solve when given; tests use
    it to inspect intermediate quantities without changing the control path.
    """

    def __init__(self, weights, table: conformal.BoundTable, cost=docp.CostSpec(),
                 safety=docp.SafetyConstants(), cfg_inner: ScpConfig = ScpConfig(),
                 cfg_outer: OuterConfig = OuterConfig(), u_max: float = 1.5,
                 audit: Optional[Callable] = None):
        self.weights = weights
        self.table = table
        self.cost = cost
        self.safety = safety
        self.cfg_inner = cfg_inner
        self.cfg_outer = cfg_outer
        self.u_max = u_max
        self.audit = audit
        self.u_warm = None
        self.reports = []
        self.wall_times = []

    def context(self, world: WorldState) -> DocpContext:
        return DocpContext(world.vehicle, list(world.pedestrians), self.weights, self.cost, self.safety, self.u_max)

    def __call__(self, world: WorldState, log: Optional[EpisodeLog] = None):
        ctx = self.context(world)
        u, rep = mpc_step(ctx, self.table, self.cfg_inner, self.cfg_outer, self.u_warm)
        if self.audit is not None:
            self.audit(ctx, u, rep)
        self.reports.append(rep.summary())
        self.wall_times.append(rep.wall_time)
        self.u_warm = shift_and_hold(u)
        return float(np.clip(u[0], 0.0, self.u_max)), rep.summary()
