"""Control-conditioned pedestrian trajectory predictor.

A small encoder/decoder GRU written directly in numpy.  The encoder maps the
initial joint state to the initial hidden state of every layer; the decoder
consumes, at step ``k``, the displacement applied on the previous step
``u_{k-1}`` and the vehicle's cumulative displacement ``x_k - x_0``.  The
output head emits per-step position deltas which are accumulated onto the
initial pedestrian position, optionally on top of a constant-velocity term.

Only sigmoid/tanh nonlinearities are used, so the map controls -> forecast
is C^1.  Reverse-mode gradients are hand-written and shared between training
(weight gradients) and :func:`input_jacobian` (control gradients).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .sim_env import PedestrianState, VehicleState

log = logging.getLogger(__name__)

WEIGHTS_VERSION = "ccmpc-gru-1"


class WeightsVersionError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorInput:
    vehicle: VehicleState
    pedestrian: PedestrianState
    controls: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "controls", np.asarray(self.controls, dtype=float).reshape(-1))


@dataclass(frozen=True)
class PredictedTrajectory:
    positions: np.ndarray  # (T, 2)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class PredictorMeta:
    horizon: int = 10
    hidden: int = 32
    layers: int = 2
    use_velocity: bool = True
    dt: float = 0.1
    u_scale: float = 1.5
    pos_scale: float = 10.0

    @property
    def n_features(self) -> int:
        return 5 if self.use_velocity else 3


@dataclass
class PredictorWeights:
    meta: PredictorMeta
    params: dict

    @property
    def horizon(self) -> int:
        return self.meta.horizon

    def copy(self) -> "PredictorWeights":
        return PredictorWeights(self.meta, {k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    layers: int = 2
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-5
    val_fraction: float = 0.1
    grad_clip: float = 5.0
    use_velocity: bool = True

    def __post_init__(self):
        if self.hidden < 4:
            raise ValueError("hidden must be >= 4")
        for name in ("layers", "lr", "batch_size", "epochs", "plateau_factor", "plateau_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be > 0")


# --------------------------------------------------------------------------- #
# parameters

def init_weights(meta: PredictorMeta, seed: int = 0) -> PredictorWeights:
    rng = np.random.default_rng(seed)
    H, F = meta.hidden, meta.n_features
    s = 1.0 / math.sqrt(H)
    p = {}
    for l in range(meta.layers):
        p[f"enc{l}_W"] = rng.uniform(-1 / math.sqrt(F), 1 / math.sqrt(F), (H, F))
        p[f"enc{l}_b"] = np.zeros(H)
        n_in = 2 if l == 0 else H
        p[f"gru{l}_Wi"] = rng.uniform(-s, s, (3 * H, n_in))
        p[f"gru{l}_Wh"] = rng.uniform(-s, s, (3 * H, H))
        p[f"gru{l}_bi"] = rng.uniform(-s, s, 3 * H)
        p[f"gru{l}_bh"] = rng.uniform(-s, s, 3 * H)
    p["out_W"] = rng.uniform(-s, s, (2, H)) * 0.1
    p["out_b"] = np.zeros(2)
    return PredictorWeights(meta, p)


def save_weights(w: PredictorWeights, path) -> None:
    meta = json.dumps({"version": WEIGHTS_VERSION, **asdict(w.meta)}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **w.params)


def load_weights(path) -> PredictorWeights:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            params = {k: z[k].copy() for k in z.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as exc:
        raise ValueError(f"corrupt weights file {path}: {exc}") from exc
    version = meta.pop("version", None)
    if version != WEIGHTS_VERSION:
        raise WeightsVersionError(f"weights version {version!r}, expected {WEIGHTS_VERSION!r}")
    w = PredictorWeights(PredictorMeta(**meta), params)
    _check_shapes(w)
    return w


def _check_shapes(w: PredictorWeights) -> None:
    m, p = w.meta, w.params
    H = m.hidden
    expect = {"out_W": (2, H), "out_b": (2,)}
    for l in range(m.layers):
        expect[f"enc{l}_W"] = (H, m.n_features)
        expect[f"enc{l}_b"] = (H,)
        expect[f"gru{l}_Wi"] = (3 * H, 2 if l == 0 else H)
        expect[f"gru{l}_Wh"] = (3 * H, H)
        expect[f"gru{l}_bi"] = (3 * H,)
        expect[f"gru{l}_bh"] = (3 * H,)
    if set(expect) != set(p):
        raise ValueError(f"weight names mismatch: {sorted(set(expect) ^ set(p))}")
    for k, shape in expect.items():
        if p[k].shape != shape:
            raise ValueError(f"{k}: shape {p[k].shape}, expected {shape}")
        if not np.all(np.isfinite(p[k])):
            raise ValueError(f"{k}: non-finite entries")


# --------------------------------------------------------------------------- #
# feature assembly

@dataclass
class Batch:
    """Raw predictor inputs for ``B`` samples (one pedestrian each)."""

    veh_pos: np.ndarray     # (B,)
    veh_lane: np.ndarray    # (B,)
    veh_last_u: np.ndarray  # (B,)
    ped_pos: np.ndarray     # (B, 2)
    ped_vel: np.ndarray     # (B, 2)
    controls: np.ndarray    # (B, T-1)

    def __len__(self):
        return len(self.veh_pos)

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def tile(self, reps: int) -> "Batch":
        return Batch(*(np.repeat(getattr(self, f), reps, axis=0) for f in self.__dataclass_fields__))


def batch_from_inputs(inputs: Sequence[PredictorInput]) -> Batch:
    return Batch(
        np.array([x.vehicle.position for x in inputs], dtype=float),
        np.array([x.vehicle.lane_offset for x in inputs], dtype=float),
        np.array([x.vehicle.last_u for x in inputs], dtype=float),
        np.array([x.pedestrian.position for x in inputs], dtype=float).reshape(-1, 2),
        np.array([x.pedestrian.velocity for x in inputs], dtype=float).reshape(-1, 2),
        np.array([x.controls for x in inputs], dtype=float),
    )


def batch_for_pedestrians(vehicle: VehicleState, peds: Sequence[PedestrianState],
                          controls: np.ndarray) -> Batch:
    """Same vehicle and control sequence for every pedestrian."""
    M = len(peds)
    controls = np.asarray(controls, dtype=float)
    return Batch(
        np.full(M, vehicle.position),
        np.full(M, vehicle.lane_offset),
        np.full(M, vehicle.last_u),
        np.array([p.position for p in peds], dtype=float).reshape(M, 2),
        np.array([p.velocity for p in peds], dtype=float).reshape(M, 2),
        np.broadcast_to(controls, (M, controls.shape[-1])).copy(),
    )


def _features(meta: PredictorMeta, b: Batch):
    rel = np.stack([b.ped_pos[:, 0] - b.veh_pos, b.ped_pos[:, 1] - b.veh_lane], axis=1) / meta.pos_scale
    cols = [rel]
    if meta.use_velocity:
        cols.append(b.ped_vel / meta.u_scale)
    cols.append((b.veh_last_u / meta.u_scale)[:, None])
    enc = np.concatenate(cols, axis=1)
    B, T = len(b), meta.horizon
    if b.controls.shape != (B, T - 1):
        raise ValueError(f"controls shape {b.controls.shape}, expected {(B, T - 1)}")
    prev_u = np.concatenate([b.veh_last_u[:, None], b.controls], axis=1)  # u_{k-1}, k=0..T-1
    cum = np.concatenate([np.zeros((B, 1)), np.cumsum(b.controls, axis=1)], axis=1)  # x_k - x_0
    dec = np.stack([prev_u / meta.u_scale, cum / meta.pos_scale], axis=2)
    return enc, dec


def _dec_grad_to_controls(meta: PredictorMeta, d_dec: np.ndarray) -> np.ndarray:
    """Chain rule from decoder features (B, T, 2) to controls (B, T-1)."""
    d_prev = d_dec[:, 1:, 0] / meta.u_scale          # u_j enters step j+1
    # u_j enters the cumulative feature of every step k > j
    d_cum = np.cumsum(d_dec[:, ::-1, 1], axis=1)[:, ::-1][:, 1:] / meta.pos_scale
    return d_prev + d_cum


# --------------------------------------------------------------------------- #
# forward / backward

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(w: PredictorWeights, b: Batch, keep_cache: bool = False):
    meta, p = w.meta, w.params
    H, L, T = meta.hidden, meta.layers, meta.horizon
    enc, dec = _features(meta, b)
    h = [np.tanh(enc @ p[f"enc{l}_W"].T + p[f"enc{l}_b"]) for l in range(L)]
    h_init = [x.copy() for x in h]
    B = len(b)
    deltas = np.empty((B, T, 2))
    cache = [] if keep_cache else None
    for k in range(T):
        x = dec[:, k, :]
        step = []
        for l in range(L):
            gi = x @ p[f"gru{l}_Wi"].T + p[f"gru{l}_bi"]
            gh = h[l] @ p[f"gru{l}_Wh"].T + p[f"gru{l}_bh"]
            r = _sigmoid(gi[:, :H] + gh[:, :H])
            z = _sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
            n = np.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
            h_new = (1.0 - z) * n + z * h[l]
            if keep_cache:
                step.append((x, h[l], r, z, n, gh[:, 2 * H:]))
            h[l] = h_new
            x = h_new
        if keep_cache:
            cache.append(step)
        deltas[:, k, :] = x @ p["out_W"].T + p["out_b"]
    if meta.use_velocity:
        deltas += b.ped_vel[:, None, :] * meta.dt
    Y = b.ped_pos[:, None, :] + np.cumsum(deltas, axis=1)
    if keep_cache:
        return Y, (enc, h_init, cache)
    return Y


def _backward(w: PredictorWeights, b: Batch, fwd_cache, dY: np.ndarray, weight_grads: bool = True):
    """Reverse pass.  Returns (param grads or None, d controls (B, T-1))."""
    meta, p = w.meta, w.params
    H, L, T = meta.hidden, meta.layers, meta.horizon
    enc, h_init, cache = fwd_cache
    B = dY.shape[0]
    g = {k: np.zeros_like(v) for k, v in p.items()} if weight_grads else None
    d_delta = np.cumsum(dY[:, ::-1, :], axis=1)[:, ::-1, :]  # delta_k feeds every y_j, j >= k
    d_dec = np.zeros((B, T, 2))
    dh_rec = [np.zeros((B, H)) for _ in range(L)]
    outW = p["out_W"]
    for k in range(T - 1, -1, -1):
        step = cache[k]
        dx = d_delta[:, k, :] @ outW  # grad wrt top hidden output at step k
        if weight_grads:
            top_h = (1.0 - step[L - 1][3]) * step[L - 1][4] + step[L - 1][3] * step[L - 1][1]
            g["out_W"] += d_delta[:, k, :].T @ top_h
            g["out_b"] += d_delta[:, k, :].sum(axis=0)
        for l in range(L - 1, -1, -1):
            x_in, h_prev, r, z, n, ghn = step[l]
            dh = dx + dh_rec[l]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dan = dn * (1.0 - n * n)
            daz = dz * z * (1.0 - z)
            dar = dan * ghn * r * (1.0 - r)
            dgi = np.concatenate([dar, daz, dan], axis=1)
            dgh = np.concatenate([dar, daz, dan * r], axis=1)
            if weight_grads:
                g[f"gru{l}_Wi"] += dgi.T @ x_in
                g[f"gru{l}_bi"] += dgi.sum(axis=0)
                g[f"gru{l}_Wh"] += dgh.T @ h_prev
                g[f"gru{l}_bh"] += dgh.sum(axis=0)
            dh_rec[l] = dh * z + dgh @ p[f"gru{l}_Wh"]
            dx = dgi @ p[f"gru{l}_Wi"]
        d_dec[:, k, :] = dx
    if weight_grads:
        for l in range(L):
            da = dh_rec[l] * (1.0 - h_init[l] ** 2)
            g[f"enc{l}_W"] += da.T @ enc
            g[f"enc{l}_b"] += da.sum(axis=0)
    return g, _dec_grad_to_controls(meta, d_dec)


def predict_batch(w: PredictorWeights, b: Batch) -> np.ndarray:
    """Forecasts ``(B, T, 2)`` for a batch of inputs."""
    return _forward(w, b)


def jacobian_batch(w: PredictorWeights, b: Batch):
    """Forecasts ``(B, T, 2)`` and control Jacobians ``(B, T, 2, T-1)``.

    One reverse sweep with ``2T`` one-hot output cotangents per sample.
    """
    T = w.meta.horizon
    B = len(b)
    n_seed = 2 * T
    tiled = b.tile(n_seed)
    Y, cache = _forward(w, tiled, keep_cache=True)
    seeds = np.zeros((B, n_seed, T, 2))
    idx = np.arange(n_seed)
    seeds[:, idx, idx // 2, idx % 2] = 1.0
    _, du = _backward(w, tiled, cache, seeds.reshape(B * n_seed, T, 2), weight_grads=False)
    J = du.reshape(B, T, 2, T - 1)
    return Y[::n_seed], J


def predict(w: PredictorWeights, X: PredictorInput) -> PredictedTrajectory:
    _check_input(w, X)
    return PredictedTrajectory(predict_batch(w, batch_from_inputs([X]))[0])


def input_jacobian(w: PredictorWeights, X: PredictorInput) -> np.ndarray:
    """``J[k, :, j] = d yhat_{k+1} / d u_j``, shape ``(T, 2, T-1)``."""
    _check_input(w, X)
    return jacobian_batch(w, batch_from_inputs([X]))[1][0]


def _check_input(w: PredictorWeights, X: PredictorInput) -> None:
    if X.controls.shape != (w.meta.horizon - 1,):
        raise ValueError(f"expected {w.meta.horizon - 1} controls, got {X.controls.shape}")


# --------------------------------------------------------------------------- #
# training

@dataclass
class Dataset:
    inputs: Batch
    targets: np.ndarray  # (N, T, 2)
    episode: np.ndarray = field(default=None)  # (N,) source episode id

    def __len__(self):
        return len(self.inputs)

    def take(self, idx) -> "Dataset":
        ep = None if self.episode is None else self.episode[idx]
        return Dataset(self.inputs.take(idx), self.targets[idx], ep)


class TrainingError(RuntimeError):
    pass


def loss_and_grads(w: PredictorWeights, b: Batch, Y: np.ndarray):
    Yhat, cache = _forward(w, b, keep_cache=True)
    err = Yhat - Y
    loss = float(np.mean(err ** 2))
    dY = 2.0 * err / err.size
    g, _ = _backward(w, b, cache, dY)
    return loss, g


def mse(w: PredictorWeights, data: Dataset, chunk: int = 4096) -> float:
    tot = 0.0
    for s in range(0, len(data), chunk):
        sl = slice(s, s + chunk)
        tot += float(np.sum((predict_batch(w, data.inputs.take(sl)) - data.targets[sl]) ** 2))
    return tot / data.targets.size


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class ReduceLROnPlateau:
    def __init__(self, opt: Adam, factor: float, patience: int, min_lr: float):
        self.opt, self.factor, self.patience, self.min_lr = opt, factor, patience, min_lr
        self.best = math.inf
        self.bad = 0

    def step(self, metric: float) -> None:
        if metric < self.best * (1 - 1e-4):
            self.best, self.bad = metric, 0
            return
        self.bad += 1
        if self.bad > self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.bad = 0


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def train(data: Dataset, cfg: TrainConfig, horizon: Optional[int] = None,
          history: Optional[TrainHistory] = None) -> PredictorWeights:
    """Fit the predictor with Adam on full-sequence MSE.

    A ``val_fraction`` of the episodes (not windows) is held out to drive the
    plateau schedule; the weights with the best validation loss are returned.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    T = horizon or data.targets.shape[1]
    meta = PredictorMeta(horizon=T, hidden=cfg.hidden, layers=cfg.layers, use_velocity=cfg.use_velocity)
    rng = np.random.default_rng(cfg.seed)
    w = init_weights(meta, seed=cfg.seed)
    train_set, val_set = _split_validation(data, cfg.val_fraction, rng)
    opt = Adam(w.params, cfg.lr)
    sched = ReduceLROnPlateau(opt, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
    history = history if history is not None else TrainHistory()
    best, best_params = math.inf, None
    n = len(train_set)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, g = loss_and_grads(w, train_set.inputs.take(idx), train_set.targets[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}")
            _clip(g, cfg.grad_clip)
            opt.step(w.params, g)
            tot += loss * len(idx)
        train_loss = tot / n
        val_loss = mse(w, val_set) if len(val_set) else train_loss
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.lr.append(opt.lr)
        log.info("epoch %d train %.5f val %.5f lr %.1e", epoch, train_loss, val_loss, opt.lr)
        if val_loss < best:
            best, best_params = val_loss, {k: v.copy() for k, v in w.params.items()}
        sched.step(val_loss)
    return PredictorWeights(meta, best_params)


def _clip(g: dict, max_norm: float) -> None:
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    if norm > max_norm:
        for v in g.values():
            v *= max_norm / norm


def _split_validation(data: Dataset, frac: float, rng: np.random.Generator):
    if frac <= 0 or len(data) < 10:
        return data, data.take(np.arange(0))
    if data.episode is not None:
        eps = np.unique(data.episode)
        n_val = max(1, int(round(frac * len(eps))))
        val_eps = rng.choice(eps, size=n_val, replace=False)
        is_val = np.isin(data.episode, val_eps)
    else:
        is_val = np.zeros(len(data), bool)
        is_val[rng.permutation(len(data))[:max(1, int(round(frac * len(data))))]] = True
    return data.take(np.flatnonzero(~is_val)), data.take(np.flatnonzero(is_val))


def last_position_mse(data: Dataset) -> float:
    """MSE of the predict-last-position baseline."""
    return float(np.mean((data.targets - data.inputs.ped_pos[:, None, :]) ** 2))


def save_dataset(data: Dataset, path) -> None:
    b = data.inputs
    with open(path, "wb") as fh:
        np.savez(fh, veh_pos=b.veh_pos, veh_lane=b.veh_lane, veh_last_u=b.veh_last_u,
                 ped_pos=b.ped_pos, ped_vel=b.ped_vel, controls=b.controls,
                 targets=data.targets,
                 episode=data.episode if data.episode is not None else np.zeros(len(data), int))


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        b = Batch(z["veh_pos"], z["veh_lane"], z["veh_last_u"], z["ped_pos"], z["ped_vel"], z["controls"])
        return Dataset(b, z["targets"], z["episode"])
