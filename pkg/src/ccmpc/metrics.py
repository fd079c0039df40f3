"""Closed-loop metrics and the PDM composite score."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .sim_env import REACHED_GOAL, EpisodeLog

PDM_WEIGHTS = (0.8, 0.1, 0.1)
A_REF = 5.0  # m/s^2 comfort reference for C_norm

EPISODE_FIELDS = ("seed", "status", "n_steps", "distance", "duration", "avg_speed", "avg_accel", "min_distance")
SUMMARY_FIELDS = ("controller", "n_pedestrians", "n_episodes", "success_rate", "avg_speed", "avg_accel",
                  "v_norm", "c_norm", "pdm_score")


def pdm_score(sr_norm: float, v_norm: float, c_norm: float) -> float:
    vals = (sr_norm, v_norm, c_norm)
    if any(not (0.0 <= v <= 1.0) for v in vals):
        raise ValueError(f"PDM inputs must lie in [0, 1], got {vals}")
    return 100.0 * sum(w * v for w, v in zip(PDM_WEIGHTS, vals))


@dataclass(frozen=True)
class EpisodeRow:
    seed: int
    status: str
    n_steps: int
    distance: float
    duration: float
    avg_speed: float
    avg_accel: float
    min_distance: float


def episode_row(log: EpisodeLog, dt: float) -> EpisodeRow:
    """Per-episode speed (distance / duration) and mean |acceleration|."""
    pos = log.positions
    u = log.controls
    n = len(u)
    duration = n * dt
    distance = float(pos[-1] - pos[0]) if len(pos) else 0.0
    if n:
        prev = np.concatenate([[log.records[0].vehicle.last_u], u[:-1]])
        accel = float(np.mean(np.abs(u - prev)) / dt ** 2)
    else:
        accel = 0.0
    dmin = min((r.min_distance for r in log.records), default=math.inf)
    return EpisodeRow(log.seed, log.status, n, distance, duration,
                      distance / duration if duration > 0 else 0.0, accel, dmin)


@dataclass
class MetricsSummary:
    controller: str
    n_pedestrians: int
    n_episodes: int
    success_rate: float
    avg_speed: float
    avg_accel: float
    v_norm: float
    c_norm: float
    pdm_score: float
    rows: list = field(default_factory=list)

    def summary_dict(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d

    def summary_csv(self) -> str:
        return _csv([self.summary_dict()], SUMMARY_FIELDS)

    def episodes_csv(self) -> str:
        return _csv([asdict(r) for r in self.rows], EPISODE_FIELDS)


def summarize(rows, controller: str, n_pedestrians: int, v_max: float, a_ref: float = A_REF) -> MetricsSummary:
    rows = list(rows)
    n = len(rows)
    if n == 0:
        raise ValueError("no episodes to summarize")
    sr = sum(r.status == REACHED_GOAL for r in rows) / n
    speed = float(np.mean([r.avg_speed for r in rows]))
    accel = float(np.mean([r.avg_accel for r in rows]))
    v_norm = min(max(speed / v_max, 0.0), 1.0)
    c_norm = max(0.0, 1.0 - accel / a_ref)
    return MetricsSummary(controller, n_pedestrians, n, sr, speed, accel, v_norm, c_norm,
                          pdm_score(sr, v_norm, c_norm), rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _csv(dicts, fields) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(fields)
    for d in dicts:
        w.writerow([_fmt(d[f]) for f in fields])
    return out.getvalue()
