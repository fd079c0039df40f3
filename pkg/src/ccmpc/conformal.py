"""Region-partitioned split conformal calibration.

Inputs are bucketed by (initial vehicle-pedestrian distance, mean planned
speed).  Inside every region the per-step bound is the conformal quantile of
the calibration scores at level ``1 - gamma`` with ``gamma = alpha / T``, so a
union bound over the horizon gives trajectory-level coverage ``1 - alpha``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .predictor import Batch, PredictedTrajectory, PredictorInput, batch_from_inputs

TABLE_VERSION = "ccmpc-bounds-1"


@dataclass(frozen=True)
class Partition:
    distance_edges: tuple = (0.0, 5.0, 10.0, 20.0, math.inf)
    speed_edges: tuple = (0.0, 5.0, 10.0, 15.0)
    dt: float = 0.1

    def __post_init__(self):
        for name in ("distance_edges", "speed_edges"):
            e = tuple(float(x) for x in getattr(self, name))
            if len(e) < 2 or any(b <= a for a, b in zip(e, e[1:])):
                raise ValueError(f"{name} must be strictly increasing with >= 2 entries")
            if e[0] != 0.0:
                raise ValueError(f"{name} must start at 0")
            object.__setattr__(self, name, e)

    @property
    def shape(self) -> tuple:
        return (len(self.distance_edges) - 1, len(self.speed_edges) - 1)

    def regions(self):
        nd, ns = self.shape
        return [(i, j) for i in range(nd) for j in range(ns)]


def _bucket(values: np.ndarray, edges: tuple) -> np.ndarray:
    # half-open [lo, hi); the last bucket is open-ended
    idx = np.searchsorted(np.asarray(edges), values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def region_features(b: Batch, dt: float):
    """(initial distance, mean planned speed) for every sample."""
    d = np.hypot(b.ped_pos[:, 0] - b.veh_pos, b.ped_pos[:, 1] - b.veh_lane)
    speed = b.controls.mean(axis=1) / dt
    return d, speed


def assign_regions(b: Batch, p: Partition) -> np.ndarray:
    """Region ids as an ``(B, 2)`` integer array."""
    d, s = region_features(b, p.dt)
    return np.stack([_bucket(d, p.distance_edges), _bucket(s, p.speed_edges)], axis=1)


def assign_region(X: PredictorInput, p: Partition) -> tuple:
    r = assign_regions(batch_from_inputs([X]), p)[0]
    return int(r[0]), int(r[1])


def nonconformity_scores(Yhat, Y) -> np.ndarray:
    """Per-step Euclidean prediction errors; works on ``(T, 2)`` or ``(B, T, 2)``."""
    Yhat = Yhat.positions if isinstance(Yhat, PredictedTrajectory) else np.asarray(Yhat, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Yhat.shape != Y.shape:
        raise ValueError(f"shape mismatch {Yhat.shape} vs {Y.shape}")
    return np.linalg.norm(Yhat - Y, axis=-1)


def quantile_rank(n: int, gamma: float) -> int:
    """1-based rank ``ceil((n + 1)(1 - gamma))`` with a float-noise guard."""
    x = (n + 1) * (1.0 - gamma)
    return int(math.ceil(x - 1e-9 * max(1.0, x)))


def conformal_quantile(scores: Sequence[float], gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    r = quantile_rank(len(s), gamma)
    if len(s) == 0 or r > len(s):
        return math.inf
    return float(s[max(r, 1) - 1])


@dataclass
class BoundTable:
    T: int
    gamma: float
    partition: Partition
    bounds: dict = field(default_factory=dict)   # region -> (T,) array
    counts: dict = field(default_factory=dict)   # region -> int

    def profile(self, region: tuple) -> np.ndarray:
        b = self.bounds.get(tuple(region))
        return np.full(self.T, math.inf) if b is None else b.copy()

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# version={TABLE_VERSION} T={self.T} gamma={float(self.gamma)!r}\n")
        out.write(f"# distance_edges={','.join(repr(float(e)) for e in self.partition.distance_edges)}\n")
        out.write(f"# speed_edges={','.join(repr(float(e)) for e in self.partition.speed_edges)}\n")
        out.write(f"# dt={float(self.partition.dt)!r}\n")
        out.write("region_d,region_s,k,bound,count\n")
        for reg in self.partition.regions():
            prof = self.profile(reg)
            for k in range(self.T):
                out.write(f"{reg[0]},{reg[1]},{k + 1},{float(prof[k])!r},{self.counts.get(reg, 0)}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BoundTable":
        header = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    header[k] = v
            elif line and not line.startswith("region_d"):
                rows.append(line.split(","))
        if header.get("version") != TABLE_VERSION:
            raise ValueError(f"bound table version {header.get('version')!r}, expected {TABLE_VERSION!r}")
        part = Partition(tuple(float(x) for x in header["distance_edges"].split(",")),
                         tuple(float(x) for x in header["speed_edges"].split(",")),
                         float(header["dt"]))
        table = cls(int(header["T"]), float(header["gamma"]), part)
        for rd, rs, k, bound, count in rows:
            reg = (int(rd), int(rs))
            table.bounds.setdefault(reg, np.full(table.T, math.inf))[int(k) - 1] = float(bound)
            table.counts[reg] = int(count)
        for reg in list(table.bounds):
            if table.counts[reg] == 0:
                del table.bounds[reg], table.counts[reg]
        return table


def calibrate_scores(regions: np.ndarray, scores: np.ndarray, partition: Partition,
                     alpha: float, T: int, n_min: int = 50) -> BoundTable:
    """Build the table from precomputed region ids ``(N, 2)`` and scores ``(N, T)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    gamma = alpha / T
    table = BoundTable(T, gamma, partition)
    regions = np.asarray(regions, dtype=int).reshape(-1, 2)
    scores = np.asarray(scores, dtype=float).reshape(-1, T)
    if np.any(scores < 0):
        raise ValueError("scores must be nonnegative")
    for reg in partition.regions():
        mask = (regions[:, 0] == reg[0]) & (regions[:, 1] == reg[1])
        n = int(mask.sum())
        if n == 0:
            continue
        table.counts[reg] = n
        if n < n_min:
            table.bounds[reg] = np.full(T, math.inf)
        else:
            table.bounds[reg] = np.array([conformal_quantile(scores[mask, k], gamma) for k in range(T)])
    return table


def calibrate(cal_records: Iterable, partition: Partition, alpha: float, T: int,
              n_min: int = 50) -> BoundTable:
    """Calibrate from ``(X, Yhat, Y)`` triples."""
    recs = list(cal_records)
    if not recs:
        return BoundTable(T, alpha / T, partition)
    b = batch_from_inputs([r[0] for r in recs])
    Yhat = np.array([r[1].positions if isinstance(r[1], PredictedTrajectory) else r[1] for r in recs])
    Y = np.array([r[2] for r in recs])
    return calibrate_scores(assign_regions(b, partition), nonconformity_scores(Yhat, Y), partition, alpha, T, n_min)


def lookup_bounds(table: BoundTable, X: PredictorInput, p: Optional[Partition] = None) -> "BoundProfile":
    region = assign_region(X, p or table.partition)
    return BoundProfile(table.profile(region), region)


def lookup_batch(table: BoundTable, b: Batch) -> tuple:
    """``(M, T)`` bounds and ``(M, 2)`` region ids for a batch of inputs."""
    regs = assign_regions(b, table.partition)
    return np.array([table.profile(tuple(r)) for r in regs]).reshape(len(b), table.T), regs


@dataclass(frozen=True)
class BoundProfile:
    bounds: np.ndarray
    region: tuple


def empirical_coverage(regions: np.ndarray, scores: np.ndarray, table: BoundTable) -> dict:
    """Per-region per-step and joint coverage of held-out scores."""
    out = {}
    regions = np.asarray(regions, dtype=int)
    for reg in table.partition.regions():
        mask = (regions[:, 0] == reg[0]) & (regions[:, 1] == reg[1])
        if not mask.any():
            continue
        covered = scores[mask] <= table.profile(reg)[None, :]
        out[reg] = {
            "n_test": int(mask.sum()),
            "n_cal": table.counts.get(reg, 0),
            "per_step": covered.mean(axis=0),
            "joint": float(covered.all(axis=1).mean()),
        }
    return out
