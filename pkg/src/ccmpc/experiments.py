"""Pipeline stages and experiment drivers.

Every stage reads its inputs from and writes its outputs to a fixed layout
under the output directory (see docs/FORMATS.md)::

    data/train.npz  data/cal.npz
    model/weights.npz
    conformal/bounds.csv
    eval/<controller>_m<M>_summary.csv  eval/<controller>_m<M>_episodes.csv
    bench/shortcut.csv
    logs/<controller>_m<M>_<seed>.jsonl
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import conformal, data, metrics, predictor
from .baselines import AcpPolicy, AcpState, ApfPolicy
from .config import RunConfig
from .mpc import MpcPolicy
from .sim_env import Scenario, run_episode

log = logging.getLogger(__name__)

CONTROLLERS = ("scp2", "acp", "apf", "full_speed", "zero_speed")


class MissingArtifact(FileNotFoundError):
    pass


@dataclass(frozen=True)
class Paths:
    root: Path

    @property
    def train(self) -> Path:
        return self.root / "data" / "train.npz"

    @property
    def cal(self) -> Path:
        return self.root / "data" / "cal.npz"

    @property
    def weights(self) -> Path:
        return self.root / "model" / "weights.npz"

    @property
    def bounds(self) -> Path:
        return self.root / "conformal" / "bounds.csv"

    @property
    def coverage(self) -> Path:
        return self.root / "conformal" / "coverage.csv"

    def summary(self, controller: str, m: int) -> Path:
        return self.root / "eval" / f"{controller}_m{m}_summary.csv"

    def episodes(self, controller: str, m: int) -> Path:
        return self.root / "eval" / f"{controller}_m{m}_episodes.csv"

    @property
    def bench(self) -> Path:
        return self.root / "bench" / "shortcut.csv"

    def episode_log(self, controller: str, m: int, seed: int) -> Path:
        return self.root / "logs" / f"{controller}_m{m}_{seed}.jsonl"


def paths(cfg: RunConfig) -> Paths:
    return Paths(cfg.resolved_output())


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}; run `{hint}` first")
    return path


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# --------------------------------------------------------------------------- #
# pipeline stages

def gen_data(cfg: RunConfig):
    train, cal = data.generate_dataset(cfg.data, cfg.scenario, cfg.sfm, cfg.horizon)
    p = paths(cfg)
    p.train.parent.mkdir(parents=True, exist_ok=True)
    predictor.save_dataset(train, p.train)
    predictor.save_dataset(cal, p.cal)
    return train, cal


def train(cfg: RunConfig, history: Optional[predictor.TrainHistory] = None) -> predictor.PredictorWeights:
    p = paths(cfg)
    ds = predictor.load_dataset(_require(p.train, "gen-data"))
    w = predictor.train(ds, cfg.predictor, cfg.horizon, history)
    p.weights.parent.mkdir(parents=True, exist_ok=True)
    predictor.save_weights(w, p.weights)
    return w


def load_weights(cfg: RunConfig) -> predictor.PredictorWeights:
    return predictor.load_weights(_require(paths(cfg).weights, "train"))


def calibration_scores(w: predictor.PredictorWeights, ds: predictor.Dataset, part: conformal.Partition):
    Yhat = np.concatenate([predictor.predict_batch(w, ds.inputs.take(slice(s, s + 4096)))
                           for s in range(0, len(ds), 4096)]) if len(ds) else np.zeros((0, w.horizon, 2))
    return conformal.assign_regions(ds.inputs, part), conformal.nonconformity_scores(Yhat, ds.targets)


def calibrate(cfg: RunConfig) -> conformal.BoundTable:
    p = paths(cfg)
    w = load_weights(cfg)
    ds = predictor.load_dataset(_require(p.cal, "gen-data"))
    part = cfg.conformal.partition(cfg.scenario.dt)
    regions, scores = calibration_scores(w, ds, part)
    table = conformal.calibrate_scores(regions, scores, part, cfg.conformal.alpha, cfg.horizon, cfg.conformal.n_min)
    _write(p.bounds, table.to_csv())
    return table


def load_table(cfg: RunConfig) -> conformal.BoundTable:
    return conformal.BoundTable.from_csv(_require(paths(cfg).bounds, "calibrate").read_text())


# --------------------------------------------------------------------------- #
# evaluation

def episode_seed(seed: int, i: int) -> int:
    return seed * 1_000_000 + i


def make_policy(controller: str, cfg: RunConfig, weights=None, table=None, shortcut: Optional[bool] = None,
                audit: Optional[Callable] = None):
    u_max = cfg.scenario.u_max
    if controller == "scp2":
        outer = cfg.mpc if shortcut is None else dataclasses.replace(cfg.mpc, shortcut=shortcut)
        return MpcPolicy(weights, table, cfg.cost, cfg.safety, cfg.scp, outer, u_max, audit)
    if controller == "acp":
        state = AcpState(cfg.acp.q0, cfg.acp.eta, cfg.acp.alpha)
        return AcpPolicy(weights, state, cfg.cost, cfg.safety, cfg.acp.solver(), u_max)
    if controller == "apf":
        return ApfPolicy(cfg.apf, u_max)
    if controller == "full_speed":
        return lambda world, log: u_max
    if controller == "zero_speed":
        return lambda world, log: 0.0
    raise ValueError(f"unknown controller {controller!r}; choose from {CONTROLLERS}")


def _artifacts_for(controller: str, cfg: RunConfig):
    if controller in ("scp2", "acp"):
        w = load_weights(cfg)
        return w, (load_table(cfg) if controller == "scp2" else None)
    return None, None


def run_episodes(controller: str, cfg: RunConfig, m: int, n_episodes: int, seed: int, weights=None,
                 table=None, shortcut: Optional[bool] = None, audit: Optional[Callable] = None,
                 write_logs: bool = False, on_episode: Optional[Callable] = None):
    """Run seeded episodes and return ``(logs, policies)``."""
    scen = Scenario(**{**cfg.scenario.__dict__, "n_pedestrians": m})
    logs, policies = [], []
    for i in range(n_episodes):
        pol = make_policy(controller, cfg, weights, table, shortcut, audit)
        s = episode_seed(seed, i)
        ep = run_episode(pol, scen, cfg.sfm, s, controller=controller)
        logs.append(ep)
        policies.append(pol)
        if write_logs:
            _write(paths(cfg).episode_log(controller, m, s), ep.to_jsonl())
        if on_episode is not None:
            on_episode(i, ep, pol)
    return logs, policies


def evaluate(cfg: RunConfig, controller: str, m: Optional[int] = None, n_episodes: Optional[int] = None,
             seed: Optional[int] = None, weights=None, table=None, write: bool = True,
             audit: Optional[Callable] = None) -> metrics.MetricsSummary:
    m = cfg.eval.n_pedestrians if m is None else m
    n_episodes = cfg.eval.n_episodes if n_episodes is None else n_episodes
    seed = cfg.eval.seed if seed is None else seed
    if weights is None and table is None:
        weights, table = _artifacts_for(controller, cfg)
    logs, _ = run_episodes(controller, cfg, m, n_episodes, seed, weights, table, audit=audit,
                           write_logs=write and cfg.eval.write_logs)
    rows = [metrics.episode_row(ep, cfg.scenario.dt) for ep in logs]
    summary = metrics.summarize(rows, controller, m, cfg.scenario.v_max)
    if write:
        p = paths(cfg)
        _write(p.summary(controller, m), summary.summary_csv())
        _write(p.episodes(controller, m), summary.episodes_csv())
    return summary


# --------------------------------------------------------------------------- #
# shortcut ablation

BENCH_FIELDS = ("n_pedestrians", "n_episodes", "n_solves", "outer_iters_off", "outer_iters_on", "reduction",
                "time_off_ms", "time_on_ms", "identical_episodes")


@dataclass
class BenchRow:
    n_pedestrians: int
    n_episodes: int
    n_solves: int
    outer_iters_off: float
    outer_iters_on: float
    reduction: float
    time_off_ms: float
    time_on_ms: float
    identical_episodes: int


def bench_one(cfg: RunConfig, m: int, n_episodes: int, seed: int, weights, table,
              audit: Optional[Callable] = None) -> BenchRow:
    out = {}
    for sc in (False, True):
        logs, pols = run_episodes("scp2", cfg, m, n_episodes, seed, weights, table, shortcut=sc,
                                  audit=audit if sc else None)
        iters = [r["outer_iterations"] for p in pols for r in p.reports]
        times = [t for p in pols for t in p.wall_times]
        out[sc] = (logs, float(np.mean(iters)), 1e3 * float(np.mean(times)), len(iters))
    same = sum(np.array_equal(a.controls, b.controls) for a, b in zip(out[False][0], out[True][0]))
    off, on = out[False][1], out[True][1]
    return BenchRow(m, n_episodes, out[True][3], off, on, (off - on) / off if off > 0 else 0.0,
                    out[False][2], out[True][2], int(same))


def bench_shortcut(cfg: RunConfig, m_values=None, n_episodes: Optional[int] = None, seed: Optional[int] = None,
                   weights=None, table=None, write: bool = True):
    m_values = cfg.bench.m_values if m_values is None else m_values
    n_episodes = cfg.bench.n_episodes if n_episodes is None else n_episodes
    seed = cfg.bench.seed if seed is None else seed
    if weights is None:
        weights, table = load_weights(cfg), load_table(cfg)
    rows = [bench_one(cfg, m, n_episodes, seed, weights, table) for m in m_values]
    if write:
        _write(paths(cfg).bench, bench_csv(rows))
    return rows


def bench_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow([getattr(r, f) if not isinstance(getattr(r, f), float) else f"{getattr(r, f):.6g}"
                    for f in BENCH_FIELDS])
    return out.getvalue()


# --------------------------------------------------------------------------- #
# coverage audit

COVERAGE_FIELDS = ("region_d", "region_s", "n_cal", "n_test", "joint") + tuple(f"k{k}" for k in range(1, 11))


def coverage_audit(cfg: RunConfig, n_test: int = 20000, stream: int = 2, weights=None, table=None,
                   write: bool = True) -> dict:
    """Empirical coverage on held-out records from an unused seed stream."""
    if weights is None:
        weights, table = load_weights(cfg), load_table(cfg)
    test = data.generate_split(cfg.data, cfg.scenario, cfg.sfm, cfg.horizon, n_test, stream)
    regions, scores = calibration_scores(weights, test, table.partition)
    cov = conformal.empirical_coverage(regions, scores, table)
    if write:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("region_d", "region_s", "n_cal", "n_test", "joint") + tuple(f"k{k}" for k in range(1, table.T + 1)))
        for reg, c in sorted(cov.items()):
            w.writerow([reg[0], reg[1], c["n_cal"], c["n_test"], f"{c['joint']:.6f}"]
                       + [f"{x:.6f}" for x in c["per_step"]])
        _write(paths(cfg).coverage, out.getvalue())
    return cov
