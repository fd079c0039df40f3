"""Dataset generation from simulated episodes.

Data episodes run under an exploratory behavior policy and are not cut short
by safety violations, so close encounters are represented.  Every window of
``T`` consecutive steps yields one record per pedestrian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictor import Batch, Dataset
from .sim_env import Scenario, SfmParams, env_step, spawn_world

BEHAVIORS = ("random_speed", "scripted")


@dataclass(frozen=True)
class DataConfig:
    n_records: int = 40000
    behavior: str = "random_speed"
    seed: int = 0
    train_fraction: float = 0.5
    n_pedestrians: int = 3
    resample_every: int = 10
    # windows start every `stride` steps
    stride: int = 2

    def __post_init__(self):
        if self.n_records <= 0:
            raise ValueError("n_records must be > 0")
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {BEHAVIORS}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


def behavior_controls(behavior: str, n_steps: int, scenario: Scenario, rng: np.random.Generator,
                      resample_every: int = 10) -> np.ndarray:
    """Open-loop displacement sequence for one data episode."""
    if behavior == "random_speed":
        n_seg = -(-n_steps // resample_every)
        speeds = rng.uniform(0.0, scenario.v_max, n_seg)
        return np.repeat(speeds, resample_every)[:n_steps] * scenario.dt
    if behavior == "scripted":
        # cruise, brake to a stop, wait, accelerate again; levels are randomized
        cruise, wait = rng.uniform(0.3, 1.0) * scenario.v_max, int(rng.integers(5, 30))
        ramp = np.linspace(cruise, 0.0, 15)
        prof = np.concatenate([np.full(20, cruise), ramp, np.zeros(wait),
                               np.linspace(0.0, scenario.v_max, 15), np.full(n_steps, scenario.v_max)])
        return prof[:n_steps] * scenario.dt
    raise ValueError(f"unknown behavior {behavior}")


def simulate_data_episode(scenario: Scenario, params: SfmParams, behavior: str, seed: int,
                          resample_every: int = 10):
    """Returns vehicle arrays, pedestrian arrays and controls for one episode."""
    rng = np.random.default_rng(seed)
    world = spawn_world(scenario, rng)
    controls = behavior_controls(behavior, scenario.max_episode_steps, scenario, rng, resample_every)
    veh_pos, last_u = [world.vehicle.position], [world.vehicle.last_u]
    ped_pos = [[p.position for p in world.pedestrians]]
    ped_vel = [[p.velocity for p in world.pedestrians]]
    applied = []
    for u in controls:
        world = env_step(world, u, scenario, params, rng)
        applied.append(world.vehicle.last_u)
        veh_pos.append(world.vehicle.position)
        last_u.append(world.vehicle.last_u)
        ped_pos.append([p.position for p in world.pedestrians])
        ped_vel.append([p.velocity for p in world.pedestrians])
        if world.vehicle.position >= scenario.road_length:
            break
    M = scenario.n_pedestrians
    return (np.array(veh_pos), np.array(last_u), np.array(ped_pos).reshape(-1, M, 2),
            np.array(ped_vel).reshape(-1, M, 2), np.array(applied))


def windows(episode, T: int, lane: float, stride: int = 1):
    """Sliding windows of one episode as ``(Batch, targets)``."""
    veh_pos, last_u, ped_pos, ped_vel, u = episode
    n = len(u)
    starts = np.arange(0, n - T + 1, stride)
    M = ped_pos.shape[1]
    if len(starts) == 0 or M == 0:
        return None
    s = np.repeat(starts, M)
    m = np.tile(np.arange(M), len(starts))
    ctrl = np.stack([u[t:t + T - 1] for t in s]) if len(s) else np.zeros((0, T - 1))
    Y = np.stack([ped_pos[t + 1:t + T + 1, j] for t, j in zip(s, m)])
    b = Batch(veh_pos[s], np.full(len(s), lane), last_u[s], ped_pos[s, m], ped_vel[s, m], ctrl)
    return b, Y


def _collect(scenario: Scenario, params: SfmParams, cfg: DataConfig, T: int, n: int, stream: int) -> Dataset:
    """``n`` records from episodes seeded ``[cfg.seed, stream, e]``, e = 0, 1, ..."""
    parts, targets, eps = [], [], []
    total, e = 0, 0
    while total < n:
        episode = simulate_data_episode(scenario, params, cfg.behavior, [cfg.seed, stream, e],
                                        cfg.resample_every)
        w = windows(episode, T, scenario.lane_offset, cfg.stride)
        if w is not None:
            parts.append(w[0])
            targets.append(w[1])
            eps.append(np.full(len(w[1]), stream * 1_000_000 + e))
            total += len(w[1])
        e += 1
        if e > 100 * n + 1000:
            raise RuntimeError("data generation produced no windows")
    b = Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in Batch.__dataclass_fields__))
    data = Dataset(b, np.concatenate(targets), np.concatenate(eps))
    return data.take(np.arange(n))


TRAIN_STREAM, CAL_STREAM = 0, 1


def _data_scenario(cfg: DataConfig, scenario: Scenario) -> Scenario:
    return Scenario(**{**scenario.__dict__, "n_pedestrians": cfg.n_pedestrians})


def generate_dataset(cfg: DataConfig, scenario: Scenario, params: SfmParams, T: int = 10):
    """Train and calibration datasets from disjoint episode seed streams."""
    scen = _data_scenario(cfg, scenario)
    n_train = int(round(cfg.n_records * cfg.train_fraction))
    train = _collect(scen, params, cfg, T, n_train, TRAIN_STREAM)
    cal = _collect(scen, params, cfg, T, cfg.n_records - n_train, CAL_STREAM)
    return train, cal


def generate_split(cfg: DataConfig, scenario: Scenario, params: SfmParams, T: int, n: int,
                   stream: int) -> Dataset:
    """Extra records from another seed stream (>= 2), e.g. for held-out audits."""
    if stream in (TRAIN_STREAM, CAL_STREAM):
        raise ValueError("streams 0 and 1 are reserved for train and cal")
    return _collect(_data_scenario(cfg, scenario), params, cfg, T, n, stream)
