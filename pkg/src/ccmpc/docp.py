"""Deterministic OCP: safety function, state rollout and linearization.

The planning variable is the displacement sequence ``u_0..u_{T-1}``.  The
cost is

    J(u) = -p * sum_k u_k + w * sum_k |u_k - u_{k-1}|,   u_{-1} = last_u,

which is kept exact inside every linear subproblem through epigraph
variables ``t_k >= |u_k - u_{k-1}|``.  Safety rows require
``c(x_k, yhat_k) >= L * Rbar_k`` for every pedestrian and step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import predictor as pred
from .sim_env import PedestrianState, VehicleState

STATE_LO = -5.0
STATE_HI = 55.0
COINCIDENT = 1e-6

SAFETY, STATE_UB, STATE_LB, CTRL_UB, CTRL_LB, TRUST_UB, TRUST_LB = (
    "safety", "state_ub", "state_lb", "ctrl_ub", "ctrl_lb", "trust_ub", "trust_lb")
ROW_KINDS = (SAFETY, STATE_UB, STATE_LB, CTRL_UB, CTRL_LB, TRUST_UB, TRUST_LB)


class InfeasibleBounds(ValueError):
    """A required error bound is infinite, so the safety row cannot be built."""

    def __init__(self, ped: int, k: int):
        super().__init__(f"infinite bound for pedestrian {ped} at step {k}")
        self.ped = ped
        self.k = k


@dataclass(frozen=True)
class CostSpec:
    progress_weight: float = 1.0
    smoothness_weight: float = 0.4

    def __post_init__(self):
        if not self.progress_weight > 0:
            raise ValueError("progress_weight must be > 0")
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")

    def value(self, u: np.ndarray, last_u: float) -> float:
        u = np.asarray(u, dtype=float)
        du = np.diff(np.concatenate([[last_u], u]))
        return float(-self.progress_weight * u.sum() + self.smoothness_weight * np.abs(du).sum())


@dataclass(frozen=True)
class SafetyConstants:
    d_safe: float = 2.0
    lipschitz_L: float = 1.0

    def __post_init__(self):
        if not (self.d_safe > 0 and self.lipschitz_L > 0):
            raise ValueError("d_safe and lipschitz_L must be > 0")


def safety_value(x: np.ndarray, y: np.ndarray, k: SafetyConstants) -> float:
    """``c(x, y) = |x - y| - d_safe``."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(math.hypot(d[0], d[1]) - k.d_safe)


def safety_grad(x: np.ndarray, y: np.ndarray):
    """Gradients of ``c`` with respect to ``x`` and ``y`` (2-vectors)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    n = math.hypot(d[0], d[1])
    unit = d / n if n >= COINCIDENT else np.array([1.0, 0.0])
    return unit, -unit


def rollout_states(x0: float, u: np.ndarray):
    """Positions ``x_1..x_T`` and their Jacobian ``dx_k/du`` (``(T, T)``)."""
    u = np.asarray(u, dtype=float)
    T = len(u)
    return x0 + np.cumsum(u), np.tril(np.ones((T, T)))


def rollout_general(f: Callable, fx: Callable, fu: Callable, x0: np.ndarray, u: np.ndarray):
    """Generic forward rollout with chain-rule state Jacobians.

    ``f(x, u)`` is the next state, ``fx`` and ``fu`` its partials.  Returns
    states ``(T, n)`` and Jacobians ``(T, n, T)`` with ``dx_0/du = 0``.
    """
    u = np.asarray(u, dtype=float)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    T, n = len(u), len(x)
    G = np.zeros((n, T))
    xs, Gs = [], []
    for k in range(T):
        A = np.atleast_2d(fx(x, u[k]))
        B = np.atleast_1d(fu(x, u[k])).reshape(n)
        G = A @ G
        G[:, k] += B
        x = np.atleast_1d(f(x, u[k]))
        xs.append(x.copy())
        Gs.append(G.copy())
    return np.array(xs), np.array(Gs)


@dataclass
class DocpContext:
    """Everything that is fixed during one MPC solve."""

    vehicle: VehicleState
    pedestrians: Sequence[PedestrianState]
    weights: pred.PredictorWeights
    cost: CostSpec = field(default_factory=CostSpec)
    safety: SafetyConstants = field(default_factory=SafetyConstants)
    u_max: float = 1.5

    @property
    def T(self) -> int:
        return self.weights.horizon

    @property
    def M(self) -> int:
        return len(self.pedestrians)

    def batch(self, u: np.ndarray) -> pred.Batch:
        return pred.batch_for_pedestrians(self.vehicle, self.pedestrians, np.asarray(u)[: self.T - 1])

    def predict(self, u: np.ndarray) -> np.ndarray:
        """``(M, T, 2)`` forecasts under plan ``u``."""
        if self.M == 0:
            return np.zeros((0, self.T, 2))
        return pred.predict_batch(self.weights, self.batch(u))

    def predict_with_jacobian(self, u: np.ndarray):
        if self.M == 0:
            return np.zeros((0, self.T, 2)), np.zeros((0, self.T, 2, self.T - 1))
        return pred.jacobian_batch(self.weights, self.batch(u))


@dataclass
class LocpProblem:
    """One linear subproblem ``min c.u + w * sum t  s.t.  A u <= b``.

    The smoothness epigraph rows ``+-(u_k - u_{k-1}) <= t_k`` are implicit
    (they depend only on ``last_u``).  Row order: safety (pedestrian-major),
    state upper, state lower, control upper, control lower, trust upper,
    trust lower.
    """

    c: np.ndarray
    smooth_weight: float
    last_u: float
    A: np.ndarray
    b: np.ndarray
    kinds: list
    ped: np.ndarray
    step: np.ndarray
    u_ref: np.ndarray
    radius: float
    ref_safety: np.ndarray = None  # (M, T) c(x_k, yhat_k) at u_ref
    ref_pred: np.ndarray = None    # (M, T, 2)

    @property
    def T(self) -> int:
        return len(self.c)

    def rows(self, kind: str) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == kind], dtype=int)

    def objective(self, u: np.ndarray) -> float:
        du = np.diff(np.concatenate([[self.last_u], u]))
        return float(self.c @ u + self.smooth_weight * np.abs(du).sum())

    def violation(self, u: np.ndarray) -> float:
        return float(np.max(self.A @ u - self.b)) if len(self.b) else -math.inf

    def dump(self) -> str:
        return json.dumps({
            "objective": self.c.tolist(),
            "smooth_weight": self.smooth_weight,
            "last_u": self.last_u,
            "u_ref": self.u_ref.tolist(),
            "radius": self.radius,
            "rows": [
                {"kind": k, "ped": int(p), "k": int(s), "a": a.tolist(), "b": float(bi)}
                for k, p, s, a, bi in zip(self.kinds, self.ped, self.step, self.A, self.b)
            ],
        }, indent=1)


def safety_rows(ctx: DocpContext, u_ref: np.ndarray, bounds: np.ndarray):
    """Linearized safety rows ``a u <= b`` plus reference values."""
    T, M = ctx.T, ctx.M
    bounds = np.asarray(bounds, dtype=float).reshape(M, T)
    bad = np.argwhere(~np.isfinite(bounds))
    if len(bad):
        raise InfeasibleBounds(int(bad[0, 0]), int(bad[0, 1]) + 1)
    xs, Gx = rollout_states(ctx.vehicle.position, u_ref)
    Y, J = ctx.predict_with_jacobian(u_ref)
    diff = np.stack([xs[None, :] - Y[..., 0], ctx.vehicle.lane_offset - Y[..., 1]], axis=-1)  # (M, T, 2)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    unit = np.where((dist >= COINCIDENT)[..., None], diff / np.maximum(dist, COINCIDENT)[..., None],
                    np.array([1.0, 0.0]))
    # grad_u c = dc/dx * dx/du - unit . dyhat/du
    grad = unit[..., 0:1] * Gx[None, :, :]
    grad[..., : T - 1] -= np.einsum("mti,mtij->mtj", unit, J)
    cref = dist - ctx.safety.d_safe
    # c_ref + grad.(u - u_ref) >= L R  <=>  -grad.u <= c_ref - grad.u_ref - L R
    A = -grad.reshape(M * T, T)
    b = (cref - grad @ u_ref - ctx.safety.lipschitz_L * bounds).reshape(M * T)
    return A, b, cref, Y


def linearize_problem(ctx: DocpContext, u_ref: np.ndarray, bounds: np.ndarray, radius: float) -> LocpProblem:
    u_ref = np.asarray(u_ref, dtype=float)
    T, M = ctx.T, ctx.M
    if u_ref.shape != (T,):
        raise ValueError(f"u_ref must have length {T}")
    if not radius > 0:
        raise ValueError("trust radius must be > 0")
    bounds = np.asarray(bounds, dtype=float).reshape(M, T)
    A_s, b_s, cref, Y = safety_rows(ctx, u_ref, bounds)
    Lt = np.tril(np.ones((T, T)))
    I = np.eye(T)
    x0 = ctx.vehicle.position
    A = np.vstack([A_s, Lt, -Lt, I, -I, I, -I])
    b = np.concatenate([
        b_s,
        np.full(T, STATE_HI - x0), np.full(T, x0 - STATE_LO),
        np.full(T, ctx.u_max), np.zeros(T),
        u_ref + radius, radius - u_ref,
    ])
    kinds = [SAFETY] * (M * T)
    for kind in ROW_KINDS[1:]:
        kinds += [kind] * T
    ped = np.concatenate([np.repeat(np.arange(M), T), np.full(6 * T, -1)])
    step = np.concatenate([np.tile(np.arange(1, T + 1), M), np.tile(np.arange(1, T + 1), 6)])
    c = np.full(T, -ctx.cost.progress_weight)
    return LocpProblem(c, ctx.cost.smoothness_weight, ctx.vehicle.last_u, A, b, kinds, ped, step,
                       u_ref.copy(), float(radius), cref, Y)


def safety_margins(ctx: DocpContext, u: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """``L * Rbar_k - c(x_k, yhat_k)`` for every pedestrian and step, ``(M, T)``."""
    xs, _ = rollout_states(ctx.vehicle.position, u)
    Y = ctx.predict(u)
    d = np.hypot(xs[None, :] - Y[..., 0], ctx.vehicle.lane_offset - Y[..., 1])
    return ctx.safety.lipschitz_L * np.asarray(bounds, dtype=float).reshape(ctx.M, ctx.T) - (d - ctx.safety.d_safe)


def evaluate_feasibility(ctx: DocpContext, u: np.ndarray, bounds: np.ndarray) -> float:
    """Largest constraint violation of the nonlinear problem (<= 0 is feasible)."""
    u = np.asarray(u, dtype=float)
    xs, _ = rollout_states(ctx.vehicle.position, u)
    parts = [
        np.max(xs) - STATE_HI, STATE_LO - np.min(xs),
        np.max(u) - ctx.u_max, -np.min(u),
    ]
    if ctx.M:
        parts.append(float(np.max(safety_margins(ctx, u, bounds))))
    return float(max(parts))
