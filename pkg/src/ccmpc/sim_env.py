"""Ground-truth world: a vehicle driving along a straight road and Social-Force
pedestrians crossing it.

The vehicle state carries its last applied displacement so that the
pedestrians' reaction to the vehicle's speed is a function of the joint state
``(x_k, y_k)`` only.  Units: meters, seconds; the control is the per-step
displacement in meters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

U_TOL = 1e-9

REACHED_GOAL = "reached_goal"
SAFETY_VIOLATION = "safety_violation"
TIMEOUT = "timeout"
POLICY_ERROR = "policy_error"
STATUSES = (REACHED_GOAL, SAFETY_VIOLATION, TIMEOUT, POLICY_ERROR)


class ControlBoundError(ValueError):
    """A controller produced a displacement outside ``[0, v_max * dt]``."""


@dataclass(frozen=True)
class VehicleState:
    position: float
    lane_offset: float = 0.0
    # displacement applied on the previous step (speed * dt)
    last_u: float = 0.0

    @property
    def position2d(self) -> np.ndarray:
        return np.array([self.position, self.lane_offset])


@dataclass(frozen=True)
class PedestrianState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        for name in ("position", "velocity", "goal"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(2)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class SfmParams:
    mass: float = 80.0
    tau: float = 0.5
    desired_speed: float = 1.3
    vehicle_repulsion_gain: float = 200.0
    vehicle_repulsion_range: float = 3.0
    noise_std: float = 0.8
    # desired speed ramps to zero inside this radius around the goal
    arrival_radius: float = 0.5
    v_ped_max: float = 3.0

    def __post_init__(self):
        positive = ("mass", "tau", "desired_speed", "vehicle_repulsion_gain",
                    "vehicle_repulsion_range", "arrival_radius", "v_ped_max")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"SfmParams.{name} must be > 0")
        if self.noise_std < 0:
            raise ValueError("SfmParams.noise_std must be >= 0")


@dataclass(frozen=True)
class Scenario:
    road_length: float = 50.0
    road_width: float = 20.0
    dt: float = 0.1
    n_pedestrians: int = 1
    d_safe: float = 2.0
    v_max: float = 15.0
    max_episode_steps: int = 400
    lane_offset: float = 0.0
    crosswalk_x: float = 30.0
    crosswalk_jitter: float = 2.0
    initial_speed: float = 0.0
    # pedestrians start |y| in [spawn_min, spawn_max] on a random side
    spawn_min: float = 1.0
    spawn_max: float = 12.0
    goal_offset: float = 14.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 < self.d_safe < self.road_width:
            raise ValueError("need 0 < d_safe < road_width")
        if not self.v_max > 0:
            raise ValueError("v_max must be > 0")
        if self.n_pedestrians < 0:
            raise ValueError("n_pedestrians must be >= 0")

    @property
    def u_max(self) -> float:
        return self.v_max * self.dt


@dataclass(frozen=True)
class WorldState:
    vehicle: VehicleState
    pedestrians: tuple
    step_index: int = 0


@dataclass
class StepRecord:
    step: int
    vehicle: VehicleState
    pedestrians: tuple
    min_distance: float
    u: Optional[float] = None
    diagnostics: Optional[dict] = None


@dataclass
class EpisodeLog:
    seed: int
    controller: str = ""
    records: list = field(default_factory=list)
    status: Optional[str] = None
    message: str = ""

    def set_status(self, status: str, message: str = "") -> None:
        if self.status is not None:
            raise RuntimeError(f"episode status already set to {self.status}")
        if status not in STATUSES:
            raise ValueError(f"unknown status {status}")
        self.status = status
        self.message = message

    @property
    def controls(self) -> np.ndarray:
        return np.array([r.u for r in self.records if r.u is not None])

    @property
    def positions(self) -> np.ndarray:
        return np.array([r.vehicle.position for r in self.records])

    @property
    def n_steps(self) -> int:
        return self.records[-1].step if self.records else 0

    def to_jsonl(self) -> str:
        """Serialize as line-delimited JSON (field order in docs/FORMATS.md)."""
        lines = [json.dumps({
            "type": "episode",
            "seed": self.seed,
            "controller": self.controller,
            "status": self.status,
            "message": self.message,
            "n_records": len(self.records),
        })]
        for r in self.records:
            lines.append(json.dumps({
                "type": "step",
                "step": r.step,
                "vehicle_position": r.vehicle.position,
                "vehicle_last_u": r.vehicle.last_u,
                "lane_offset": r.vehicle.lane_offset,
                "ped_positions": [p.position.tolist() for p in r.pedestrians],
                "ped_velocities": [p.velocity.tolist() for p in r.pedestrians],
                "min_distance": _json_float(r.min_distance),
                "u": r.u,
                "diagnostics": r.diagnostics,
            }))
        return "\n".join(lines) + "\n"


def _json_float(x: float):
    return x if math.isfinite(x) else None


# --------------------------------------------------------------------------- #
# dynamics

def vehicle_step(x: VehicleState, u: float, u_max: float) -> VehicleState:
    """Advance the vehicle by displacement ``u``; ``x_{k+1} = x_k + u_k``."""
    u = float(u)
    if not (-U_TOL <= u <= u_max + U_TOL) or not math.isfinite(u):
        raise ControlBoundError(f"control {u!r} outside [0, {u_max}]")
    u = min(max(u, 0.0), u_max)
    return VehicleState(x.position + u, x.lane_offset, u)


def desired_velocity(ped: PedestrianState, params: SfmParams) -> np.ndarray:
    to_goal = ped.goal - ped.position
    dist = float(np.hypot(to_goal[0], to_goal[1]))
    if dist < 1e-12:
        return np.zeros(2)
    speed = params.desired_speed * min(1.0, dist / params.arrival_radius)
    return speed * to_goal / dist


def vehicle_force(ped: PedestrianState, vehicle: VehicleState, params: SfmParams,
                  u_max: float = 1.5) -> np.ndarray:
    """Repulsive acceleration exerted by the vehicle, m/s^2."""
    diff = ped.position - vehicle.position2d
    d = float(np.hypot(diff[0], diff[1]))
    direction = diff / d if d > 1e-9 else np.array([0.0, 1.0])
    speed_factor = 1.0 + vehicle.last_u / u_max
    mag = params.vehicle_repulsion_gain * speed_factor * math.exp(-d / params.vehicle_repulsion_range) / params.mass
    mag = min(mag, 10.0 * params.vehicle_repulsion_gain / params.mass)
    return mag * direction


def sfm_accel(ped: PedestrianState, vehicle: VehicleState, params: SfmParams,
              rng: np.random.Generator, u_max: float = 1.5) -> np.ndarray:
    """Pedestrian acceleration: destination relaxation + vehicle repulsion + noise.

    Two normals are always drawn so the random stream does not depend on
    ``noise_std``.
    """
    xi = rng.normal(size=2)
    f_dest = (desired_velocity(ped, params) - ped.velocity) / params.tau
    return f_dest + vehicle_force(ped, vehicle, params, u_max) + params.noise_std * xi


def _cap_speed(v: np.ndarray, vmax: float) -> np.ndarray:
    s = float(np.hypot(v[0], v[1]))
    return v * (vmax / s) if s > vmax else v


def env_step(world: WorldState, u: float, scenario: Scenario, params: SfmParams,
             rng: np.random.Generator) -> WorldState:
    """Advance the joint state one period (semi-implicit Euler for pedestrians)."""
    vehicle = vehicle_step(world.vehicle, u, scenario.u_max)
    dt = scenario.dt
    peds = []
    for ped in world.pedestrians:
        a = sfm_accel(ped, world.vehicle, params, rng, scenario.u_max)
        v = _cap_speed(ped.velocity + a * dt, params.v_ped_max)
        peds.append(PedestrianState(ped.position + v * dt, v, ped.goal))
    return WorldState(vehicle, tuple(peds), world.step_index + 1)


# --------------------------------------------------------------------------- #
# episodes

def spawn_world(scenario: Scenario, rng: np.random.Generator) -> WorldState:
    """Vehicle at the start line; pedestrians near the crosswalk heading across."""
    peds = []
    for _ in range(scenario.n_pedestrians):
        side = 1.0 if rng.random() < 0.5 else -1.0
        x = scenario.crosswalk_x + rng.uniform(-scenario.crosswalk_jitter, scenario.crosswalk_jitter)
        y = scenario.lane_offset + side * rng.uniform(scenario.spawn_min, scenario.spawn_max)
        goal = np.array([x, scenario.lane_offset - side * scenario.goal_offset])
        peds.append(PedestrianState(np.array([x, y]), np.zeros(2), goal))
    vehicle = VehicleState(0.0, scenario.lane_offset, scenario.initial_speed * scenario.dt)
    return WorldState(vehicle, tuple(peds), 0)


def pedestrian_distances(world: WorldState) -> np.ndarray:
    if not world.pedestrians:
        return np.zeros(0)
    pv = world.vehicle.position2d
    return np.array([float(np.hypot(*(p.position - pv))) for p in world.pedestrians])


def in_road_band(ped: PedestrianState, scenario: Scenario) -> bool:
    return abs(ped.position[1]) <= 0.5 * scenario.road_width


def safety_violated(world: WorldState, scenario: Scenario) -> bool:
    d = pedestrian_distances(world)
    return any(di < scenario.d_safe and in_road_band(p, scenario)
               for di, p in zip(d, world.pedestrians))


def _min_distance(world: WorldState) -> float:
    d = pedestrian_distances(world)
    return float(d.min()) if d.size else math.inf


Policy = Callable[[WorldState, EpisodeLog], Any]


def run_episode(policy: Policy, scenario: Scenario, params: SfmParams, seed: int,
                controller: str = "", world: Optional[WorldState] = None) -> EpisodeLog:
    """Run one closed-loop episode.

    ``policy(world, log)`` returns either a displacement or a
    ``(displacement, diagnostics_dict)`` pair.  The episode rng drives both
    the initial placement (unless ``world`` is given) and pedestrian noise.
    """
    rng = np.random.default_rng(seed)
    if world is None:
        world = spawn_world(scenario, rng)
    log = EpisodeLog(seed=seed, controller=controller)
    log.records.append(StepRecord(world.step_index, world.vehicle, world.pedestrians, _min_distance(world)))
    while True:
        try:
            out = policy(world, log)
            u, diag = out if isinstance(out, tuple) else (out, None)
            nxt = env_step(world, u, scenario, params, rng)
        except Exception as exc:  # noqa: BLE001 - any controller failure ends the episode
            log.set_status(POLICY_ERROR, f"{type(exc).__name__}: {exc}")
            return log
        log.records[-1].u = float(nxt.vehicle.last_u)
        log.records[-1].diagnostics = diag
        world = nxt
        log.records.append(StepRecord(world.step_index, world.vehicle, world.pedestrians, _min_distance(world)))
        if safety_violated(world, scenario):
            log.set_status(SAFETY_VIOLATION)
        elif world.vehicle.position >= scenario.road_length:
            log.set_status(REACHED_GOAL)
        elif world.step_index >= scenario.max_episode_steps:
            log.set_status(TIMEOUT)
        if log.status is not None:
            return log


def with_pedestrians(world: WorldState, peds) -> WorldState:
    return replace(world, pedestrians=tuple(peds))
