"""MSE objective, Adam/Adamax, gradient clipping, step-decay schedule and the epoch loop."""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from .autograd import Tape, backward, record
from .config import LOG_EVERY, N_JOBS
from .ctfno import CtfnoParams, build_forward, forward, gershgorin_normalize
from .datasets import TrajectoryDataset
from .errors import DatasetError, DivergenceError, ShapeError
from .rng import RngStream

HISTORY_COLUMNS = ["epoch", "lr", "train_mse", "test_rmse"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-3, gt=0)
    decay: float = Field(1.0, gt=0, le=1)
    decay_every: int = Field(100, ge=1)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(20, ge=1)
    clip: float | None = Field(None, gt=0)
    stabilization: float | None = Field(None, gt=0)
    seed: int = 0
    optimizer: Literal["adam", "adamax"] = "adam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    # trajectories per tape; fixes the reduction order independent of workers
    chunk_size: int = Field(4, ge=1)


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros(cls, params: CtfnoParams) -> "OptimState":
        m = {n: np.zeros(_real_view(a).shape) for n, a in params.arrays.items()}
        v = {n: np.zeros(_real_view(a).shape) for n, a in params.arrays.items()}
        return cls(m=m, v=v, step=0)


def _real_view(a: np.ndarray) -> np.ndarray:
    """Complex arrays as interleaved (re, im) float64; real arrays unchanged."""
    a = np.ascontiguousarray(a)
    return a.view(np.float64) if np.iscomplexobj(a) else a


# ============================================================
# LOSSES
# ============================================================

def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes differ {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def rmse(pred, target) -> float:
    return float(np.sqrt(mse(pred, target)))


# ============================================================
# OPTIMIZER
# ============================================================

def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> dict[str, np.ndarray]:
    """Scale all gradients so their global L2 norm is at most threshold."""
    if not threshold > 0:
        raise ValueError(f"clip threshold must be > 0, got {threshold}")
    norm = global_norm(grads)
    if norm <= threshold:
        return dict(grads)
    scale = threshold / norm
    return {n: g * scale for n, g in grads.items()}


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads.values())))


def adam_step(params: CtfnoParams, grads: dict[str, np.ndarray], state: OptimState, lr: float,
              config: TrainConfig | None = None, bound: float | None = None) -> tuple[CtfnoParams, OptimState]:
    """
    One bias-corrected Adam (or Adamax) update; complex parameters are updated
    as (re, im) pairs. With `bound` the rows are projected afterwards.
    """
    config = config or TrainConfig()
    b1, b2, eps = config.beta1, config.beta2, config.eps
    step = state.step + 1
    arrays, m_new, v_new = {}, {}, {}
    for name, value in params.arrays.items():
        p = np.array(value, copy=True)
        pv = _real_view(p)
        g = _real_view(np.asarray(grads[name], dtype=p.dtype))
        m = b1 * state.m[name] + (1.0 - b1) * g
        if config.optimizer == "adamax":
            v = np.maximum(b2 * state.v[name], np.abs(g))
            pv -= (lr / (1.0 - b1 ** step)) * m / (v + eps)
        else:
            v = b2 * state.v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** step)
            v_hat = v / (1.0 - b2 ** step)
            pv -= lr * m_hat / (np.sqrt(v_hat) + eps)
        arrays[name], m_new[name], v_new[name] = p, m, v
    out = CtfnoParams(params.config, arrays)
    if bound is not None:
        out = gershgorin_normalize(out, bound)
    return out, OptimState(m=m_new, v=v_new, step=step)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """lr0 * decay^floor(epoch / decay_every), epochs counted from 0."""
    return config.learning_rate * config.decay ** (epoch // config.decay_every)


def effective_bound(params: CtfnoParams, config: TrainConfig) -> float | None:
    return config.stabilization if config.stabilization is not None else params.config.stabilization


# ============================================================
# BATCH GRADIENTS
# ============================================================

def _chunk_grad(params: CtfnoParams, a: np.ndarray, target: np.ndarray, times: np.ndarray, weight: float):
    tape = Tape()
    slots = {n: tape.param(n, v) for n, v in params.arrays.items()}
    out = build_forward(tape, slots, params.config, a, times)
    loss = record(tape, "scale", record(tape, "mse", out, tape.constant(target)), alpha=weight)
    grads = backward(tape, loss)
    return float(tape.value(loss)), grads


def _chunks(indices: np.ndarray, size: int) -> list[np.ndarray]:
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def batch_loss_and_grads(params: CtfnoParams, dataset: TrajectoryDataset, indices, chunk_size: int,
                         n_jobs: int | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """
    MSE over the batch and its gradient. Trajectories are taken in ascending
    index order, split into fixed chunks and reduced in chunk order.
    """
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    total = indices.size
    parts = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(_chunk_grad)(params, dataset.initial[c], dataset.trajectories[c], dataset.times, c.size / total)
        for c in _chunks(indices, chunk_size)
    )
    loss = 0.0
    grads = {n: np.zeros_like(a) for n, a in params.arrays.items()}
    for part_loss, part_grads in parts:
        loss += part_loss
        for n in grads:
            grads[n] = grads[n] + part_grads[n]
    return loss, grads


def evaluate_rmse(params: CtfnoParams, dataset: TrajectoryDataset, chunk_size: int = 4, times=None,
                  targets: np.ndarray | None = None) -> float:
    """RMSE pooled over every (trajectory, time, space, channel) entry."""
    times = dataset.times if times is None else np.asarray(times, dtype=np.float64)
    targets = dataset.trajectories if targets is None else targets
    if dataset.count == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    sq, count = 0.0, 0
    for c in _chunks(np.arange(dataset.count), chunk_size):
        pred = forward(params, dataset.initial[c], times)
        if pred.shape != targets[c].shape:
            raise ShapeError(f"prediction {pred.shape} vs target {targets[c].shape}")
        diff = pred - targets[c]
        sq += float(np.sum(diff * diff))
        count += diff.size
    return float(np.sqrt(sq / count))


# ============================================================
# EPOCH LOOP
# ============================================================

@dataclass
class TrainResult:
    params: CtfnoParams
    history: pd.DataFrame
    state: OptimState
    final_train_rmse: float


def train(params: CtfnoParams, dataset: TrajectoryDataset, config: TrainConfig,
          test: TrajectoryDataset | None = None, log_every: int | None = None,
          state: OptimState | None = None, start_epoch: int = 0) -> TrainResult:
    """
    Seeded shuffle per epoch, batches of whole trajectories at every sample
    time, MSE backward, optional clip, Adam/Adamax step, optional projection.

    With `state` and `start_epoch` a stopped run continues where it left off;
    shuffles and the lr schedule depend only on the epoch number.
    """
    if dataset.count == 0:
        raise DatasetError("training set is empty")
    log_every = LOG_EVERY if log_every is None else log_every
    bound = effective_bound(params, config)
    if bound is not None:
        params = gershgorin_normalize(params, bound)
    state = state if state is not None else OptimState.zeros(params)
    rows = []

    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config)
        order = RngStream(config.seed, epoch, purpose="shuffle").permutation(dataset.count)
        weighted, entries = 0.0, 0
        for b, start in enumerate(range(0, dataset.count, config.batch_size)):
            batch = order[start:start + config.batch_size]
            loss, grads = batch_loss_and_grads(params, dataset, batch, config.chunk_size)
            if not np.isfinite(loss) or not np.isfinite(global_norm(grads)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            if config.clip is not None:
                grads = clip_gradients(grads, config.clip)
            params, state = adam_step(params, grads, state, lr, config, bound)
            size = batch.size * dataset.times.size * dataset.grid * dataset.out_channels
            weighted += loss * size
            entries += size

        test_rmse = evaluate_rmse(params, test, config.chunk_size) if test is not None and test.count else float("nan")
        rows.append({"epoch": epoch, "lr": lr, "train_mse": weighted / entries, "test_rmse": test_rmse})
        if log_every and ((epoch + 1) % log_every == 0 or epoch + 1 == config.epochs):
            print(f"[TRAIN] epoch {epoch + 1}/{config.epochs} lr={lr:.3e} "
                  f"train_mse={weighted / entries:.4e} test_rmse={test_rmse:.4e}")

    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    final_rmse = evaluate_rmse(params, dataset, config.chunk_size)
    return TrainResult(params=params, history=history, state=state, final_train_rmse=final_rmse)
