"""Comparison controllers: artificial potential field and adaptive conformal MPC."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from . import docp
from .docp import CostSpec, DocpContext, SafetyConstants
from .mpc import shift_and_hold
from .sim_env import EpisodeLog, WorldState


# --------------------------------------------------------------------------- #
# APF

@dataclass(frozen=True)
class ApfConfig:
    attractive_gain: float = 1.0
    repulsive_gain: float = 30.0
    influence_radius: float = 8.0
    speed_map_gain: float = 1.5

    def __post_init__(self):
        for name in ("attractive_gain", "repulsive_gain", "influence_radius", "speed_map_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ApfConfig.{name} must be > 0")


def repulsion(d: float, cfg: ApfConfig) -> float:
    if d >= cfg.influence_radius:
        return 0.0
    d = max(d, 1e-6)
    return cfg.repulsive_gain * (1.0 / d - 1.0 / cfg.influence_radius) / d ** 2


def apf_control(world: WorldState, cfg: ApfConfig = ApfConfig(), u_max: float = 1.5) -> float:
    """Attractive pull along the road minus the longitudinal part of the repulsion."""
    car = world.vehicle.position2d
    force = cfg.attractive_gain
    for ped in world.pedestrians:
        diff = ped.position - car
        d = float(np.hypot(diff[0], diff[1]))
        if d < cfg.influence_radius:
            # the vehicle is pushed away from the pedestrian, so only the
            # component along the road axis matters
            direction = diff[0] / d if d > 1e-9 else 1.0
            force -= repulsion(d, cfg) * direction
    return float(min(max(cfg.speed_map_gain * force, 0.0), u_max))


class ApfPolicy:
    def __init__(self, cfg: ApfConfig = ApfConfig(), u_max: float = 1.5):
        self.cfg = cfg
        self.u_max = u_max

    def __call__(self, world: WorldState, log: Optional[EpisodeLog] = None):
        return apf_control(world, self.cfg, self.u_max)


# --------------------------------------------------------------------------- #
# ACP

@dataclass(frozen=True)
class AcpState:
    q: float = 0.5
    eta: float = 0.05
    alpha: float = 0.15

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("quantile must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")


def acp_update(s: AcpState, covered: bool) -> AcpState:
    """Online quantile step ``q' = max(0, q + eta * (err - alpha))``.

    A miss (``err = 1``) raises the bound by ``eta * (1 - alpha)``; a hit
    lowers it by ``eta * alpha``, so the long-run miss rate tracks ``alpha``.
    """
    err = 0.0 if covered else 1.0
    return replace(s, q=max(0.0, s.q + s.eta * (err - s.alpha)))


@dataclass(frozen=True)
class AcpSolverConfig:
    max_iter: int = 50
    ftol: float = 1e-6
    feas_tol: float = 1e-6


class AcpPolicy:
    """MPC with a single online-adapted bound ``q`` for all steps.

    The prediction issued ``T`` steps ago can only be scored once the
    corresponding pedestrian positions are observed, so ``q`` stays at its
    initial value for the first ``T`` steps.  Scoring re-runs the predictor
    with the displacements that were actually applied.
    """

    def __init__(self, weights, state: AcpState = AcpState(), cost: CostSpec = CostSpec(),
                 safety: SafetyConstants = SafetyConstants(), solver: AcpSolverConfig = AcpSolverConfig(),
                 u_max: float = 1.5):
        self.weights = weights
        self.state = state
        self.cost = cost
        self.safety = safety
        self.solver = solver
        self.u_max = u_max
        self.T = weights.horizon
        self.history = deque(maxlen=self.T + 1)   # (vehicle, pedestrians) per step
        self.applied = deque(maxlen=self.T)
        self.u_warm = np.zeros(self.T)
        self.q_trace = []
        self.failures = 0

    def _score(self, world: WorldState) -> Optional[bool]:
        """Coverage of the forecast issued T steps ago, or None during warm-up."""
        if len(self.history) < self.T + 1:
            return None
        veh0, peds0 = self.history[0]
        if not peds0:
            return True
        ctx = DocpContext(veh0, list(peds0), self.weights, self.cost, self.safety, self.u_max)
        u_real = np.array(list(self.applied) + [0.0])
        Y = ctx.predict(u_real)
        # realized positions y_1..y_T of the same pedestrians
        realized = np.array([[p.position for p in peds] for _, peds in list(self.history)[1:]])
        err = np.linalg.norm(Y - realized.transpose(1, 0, 2), axis=-1)
        return bool(np.all(err <= self.state.q))

    def __call__(self, world: WorldState, log: Optional[EpisodeLog] = None):
        if self.history and len(self.applied) < len(self.history):
            self.applied.append(world.vehicle.last_u)
        self.history.append((world.vehicle, tuple(world.pedestrians)))
        covered = self._score(world)
        if covered is not None:
            self.state = acp_update(self.state, covered)
        self.q_trace.append(self.state.q)
        ctx = DocpContext(world.vehicle, list(world.pedestrians), self.weights, self.cost, self.safety, self.u_max)
        u, ok = acp_plan(ctx, self.state.q, self.u_warm, self.solver)
        if not ok:
            self.failures += 1
            u = np.zeros(self.T)
        self.u_warm = shift_and_hold(u)
        return float(np.clip(u[0], 0.0, self.u_max)), {"q": self.state.q, "solver_ok": ok}


def acp_plan(ctx: DocpContext, q: float, u_init: np.ndarray, cfg: AcpSolverConfig = AcpSolverConfig()):
    """Local SQP solve with uniform bound ``q``.  Returns ``(u, feasible)``."""
    T, M = ctx.T, ctx.M
    bounds = np.full((M, T), q)
    w, p = ctx.cost.smoothness_weight, ctx.cost.progress_weight
    D = np.eye(T) - np.eye(T, k=-1)
    e0 = np.zeros(T)
    e0[0] = ctx.vehicle.last_u
    cache = {}

    def rows(z):
        key = z[:T].tobytes()
        if key not in cache:
            cache.clear()
            A, b, _, _ = docp.safety_rows(ctx, z[:T], bounds) if M else (np.zeros((0, T)), np.zeros(0), 0, 0)
            cache[key] = (A, b)
        return cache[key]

    def safety_fun(z):
        # nonlinear margin c - L q >= 0 for every pedestrian and step
        return -docp.safety_margins(ctx, z[:T], bounds).reshape(-1)

    def safety_jac(z):
        A, _ = rows(z)
        return np.hstack([-A, np.zeros((len(A), T))])

    # epigraph t >= |u_k - u_{k-1}| and the state box, all linear
    Lt = np.tril(np.ones((T, T)))
    Z = np.zeros((T, T))
    lin = np.vstack([np.hstack([-D, np.eye(T)]), np.hstack([D, np.eye(T)]),
                     np.hstack([-Lt, Z]), np.hstack([Lt, Z])])
    x0 = ctx.vehicle.position
    off = np.concatenate([e0, -e0, np.full(T, docp.STATE_HI - x0), np.full(T, x0 - docp.STATE_LO)])
    cons = [{"type": "ineq", "fun": lambda z: lin @ z + off, "jac": lambda z: lin}]
    if M:
        cons.append({"type": "ineq", "fun": safety_fun, "jac": safety_jac})
    c = np.concatenate([np.full(T, -p), np.full(T, w)])
    u0 = np.clip(np.asarray(u_init, dtype=float), 0.0, ctx.u_max)
    t0 = np.abs(D @ u0 - e0)
    res = minimize(lambda z: float(c @ z), np.concatenate([u0, t0]), jac=lambda z: c, method="SLSQP",
                   bounds=[(0.0, ctx.u_max)] * T + [(0.0, None)] * T, constraints=cons,
                   options={"maxiter": cfg.max_iter, "ftol": cfg.ftol})
    u = np.clip(res.x[:T], 0.0, ctx.u_max)
    feasible = docp.evaluate_feasibility(ctx, u, bounds) <= cfg.feas_tol if M else True
    return u, bool(feasible and np.all(np.isfinite(u)))
