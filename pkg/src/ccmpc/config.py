"""Run configuration: one YAML file with one section per component."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .baselines import AcpSolverConfig, ApfConfig
from .conformal import Partition
from .data import DataConfig
from .docp import CostSpec, SafetyConstants
from .mpc import OuterConfig
from .predictor import TrainConfig
from .scp_solver import ScpConfig
from .sim_env import Scenario, SfmParams

OUTPUT_ENV = "CCMPC_OUTPUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.15
    distance_edges: tuple = (0.0, 5.0, 10.0, 20.0, float("inf"))
    speed_edges: tuple = (0.0, 5.0, 10.0, 15.0)
    n_min: int = 50

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        object.__setattr__(self, "distance_edges", tuple(float(x) for x in self.distance_edges))
        object.__setattr__(self, "speed_edges", tuple(float(x) for x in self.speed_edges))

    def partition(self, dt: float) -> Partition:
        return Partition(self.distance_edges, self.speed_edges, dt)


@dataclass(frozen=True)
class AcpConfig:
    q0: float = 0.5
    eta: float = 0.05
    alpha: float = 0.15
    max_iter: int = 50

    def solver(self) -> AcpSolverConfig:
        return AcpSolverConfig(max_iter=self.max_iter)


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 200
    seed: int = 1
    n_pedestrians: int = 1
    write_logs: bool = False


@dataclass(frozen=True)
class BenchConfig:
    m_values: tuple = (1, 5, 9)
    n_episodes: int = 20
    seed: int = 2

    def __post_init__(self):
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))


SECTIONS = {
    "scenario": Scenario,
    "sfm": SfmParams,
    "data": DataConfig,
    "predictor": TrainConfig,
    "conformal": ConformalConfig,
    "cost": CostSpec,
    "safety": SafetyConstants,
    "scp": ScpConfig,
    "mpc": OuterConfig,
    "apf": ApfConfig,
    "acp": AcpConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
}


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    sfm: SfmParams = field(default_factory=SfmParams)
    data: DataConfig = field(default_factory=DataConfig)
    predictor: TrainConfig = field(default_factory=TrainConfig)
    conformal: ConformalConfig = field(default_factory=ConformalConfig)
    cost: CostSpec = field(default_factory=CostSpec)
    safety: SafetyConstants = field(default_factory=SafetyConstants)
    scp: ScpConfig = field(default_factory=ScpConfig)
    mpc: OuterConfig = field(default_factory=OuterConfig)
    apf: ApfConfig = field(default_factory=ApfConfig)
    acp: AcpConfig = field(default_factory=AcpConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output_dir: str = "runs/default"
    horizon: int = 10

    def with_section(self, name: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **changes)})

    def resolved_output(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            out[name] = {k: _plain(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        out["output_dir"] = self.output_dir
        out["horizon"] = self.horizon
        return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _build(cls, values: Any, where: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {where!r}: {exc}") from exc


def from_dict(d: Optional[dict]) -> RunConfig:
    d = dict(d or {})
    top = set(SECTIONS) | {"output_dir", "horizon"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _build(cls, d.get(name), name) for name, cls in SECTIONS.items()}
    if "output_dir" in d:
        kwargs["output_dir"] = str(d["output_dir"])
    if "horizon" in d:
        kwargs["horizon"] = int(d["horizon"])
        if kwargs["horizon"] < 2:
            raise ConfigError("horizon must be >= 2")
    return RunConfig(**kwargs)


def load_config(path: Optional[os.PathLike]) -> RunConfig:
    """Read a YAML config (defaults when ``path`` is None).

    A non-empty ``CCMPC_OUTPUT`` environment variable replaces ``output_dir``.
    """
    cfg = RunConfig() if path is None else _read_config(path)
    env = os.environ.get(OUTPUT_ENV)
    return dataclasses.replace(cfg, output_dir=env) if env else cfg


def _read_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(d)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
