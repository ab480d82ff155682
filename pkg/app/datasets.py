"""
TrajectoryDataset, its generation and its on-disk format.

Directory layout:
    meta         UTF-8 JSON: problem, shapes, times, seed, generator version, spec
    data.bin     little-endian float64, [trajectory, time, space, channel]
    initial.bin  little-endian float64, [trajectory, space, channel]

Low-dimensional problems (spiral, stiff, sawtooth, square) are stored as
constant functions on a small grid (`ode_grid` cells) so every problem
shares one model interface.
"""

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .config import GENERATOR_VERSION, N_JOBS
from .dynamics import (
    TWO_PI, GrfSpec, gen_sawtooth, gen_spiral, gen_square, gen_stiff_vdp,
    sample_grf, sample_reaction_initial, sawtooth, solve_burgers, solve_heat,
    solve_reaction, square,
)
from .errors import ConfigError, DatasetError, ShapeError
from .rng import RngStream
from .spectral import resample

Problem = Literal["heat", "burgers", "reaction", "spiral", "stiff", "sawtooth", "square"]
PROBLEMS: tuple[str, ...] = ("heat", "burgers", "reaction", "spiral", "stiff", "sawtooth", "square")
PDE_PROBLEMS = ("heat", "burgers", "reaction")

_DEFAULTS: dict[str, dict] = {
    "heat": {"n": 1024, "dt": 0.05, "horizon": 2.5, "nu": 0.001,
             "grf": {"sigma": 20.0, "tau": 3.5, "alpha": 2.5}, "n_train": 400, "n_test": 100},
    "burgers": {"n": 1024, "dt": 0.005, "horizon": 1.0, "nu": 0.001, "dt_solver": 1e-4,
                "grf": {"sigma": 7.0, "tau": 7.0, "alpha": 2.5}, "n_train": 400, "n_test": 100},
    "reaction": {"n": 100, "dt": 0.02, "horizon": 1.0, "rho": 6.0, "n_train": 400, "n_test": 100},
    "spiral": {"horizon": 10.0, "samples": 100, "n_train": 200, "n_test": 50},
    "stiff": {"horizon": 20.0, "samples": 100, "mu": 1000.0, "tol": 1e-8, "n_train": 200, "n_test": 50},
    "sawtooth": {"horizon": 20.0, "samples": 100, "n_train": 200, "n_test": 50},
    "square": {"horizon": 20.0, "samples": 100, "n_train": 200, "n_test": 50},
}

# (input channels, output channels)
_CHANNELS = {"heat": (1, 1), "burgers": (1, 1), "reaction": (1, 1),
             "spiral": (2, 2), "stiff": (2, 2), "sawtooth": (2, 1), "square": (2, 1)}


class DataSpec(BaseModel):
    """Everything that determines a generated dataset besides the seed."""

    model_config = ConfigDict(extra="forbid")

    problem: Problem
    n: int | None = Field(None, ge=2)
    ode_grid: int = Field(8, ge=2)
    n_train: int = Field(1, ge=0)
    n_test: int = Field(0, ge=0)
    dt: float | None = Field(None, gt=0)
    horizon: float = Field(1.0, gt=0)
    samples: int | None = Field(None, ge=1)
    nu: float = Field(0.001, ge=0)
    rho: float = 6.0
    dt_solver: float = Field(1e-4, gt=0)
    mu: float = Field(1000.0, ge=0)
    tol: float = Field(1e-8, gt=0)
    grf: GrfSpec | None = None
    spiral_range: float = Field(2.0, gt=0)
    stiff_x0: tuple[float, float] = (0.1, 2.0)

    @model_validator(mode="after")
    def _complete(self):
        if self.problem in PDE_PROBLEMS:
            if self.n is None or self.dt is None:
                raise ValueError(f"{self.problem} needs a grid size n and a time step dt")
            if self.problem in ("heat", "burgers") and self.grf is None:
                raise ValueError(f"{self.problem} needs a grf spec")
        return self

    @classmethod
    def for_problem(cls, problem: str, **overrides) -> "DataSpec":
        """Defaults for `problem` with non-None overrides applied."""
        if problem not in _DEFAULTS:
            raise ConfigError(f"unknown problem: {problem!r} (expected one of {', '.join(PROBLEMS)})")
        values = {"problem": problem, **_DEFAULTS[problem]}
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigError(f"invalid data spec: {e.errors()[0]['msg']}") from e

    @property
    def grid(self) -> int:
        return self.n if self.problem in PDE_PROBLEMS else self.ode_grid

    @property
    def channels(self) -> tuple[int, int]:
        return _CHANNELS[self.problem]

    def sample_times(self) -> np.ndarray:
        """PDE problems: dt, 2 dt, ..., horizon. ODE problems: linspace(0, horizon, samples)."""
        if self.problem in PDE_PROBLEMS:
            count = int(round(self.horizon / self.dt))
            return self.dt * np.arange(1, count + 1)
        return np.linspace(0.0, self.horizon, self.samples or 100)


# ============================================================
# DATASET
# ============================================================


@dataclass
class TrajectoryDataset:
    problem: str
    times: np.ndarray
    initial: np.ndarray        # [count, grid, in_channels]
    trajectories: np.ndarray   # [count, |times|, grid, out_channels]
    master_seed: int
    first_index: int = 0
    spec: DataSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DatasetError("sample times must be strictly increasing")
        if self.initial.ndim != 3 or self.trajectories.ndim != 4:
            raise ShapeError("initial must be 3-D and trajectories 4-D")
        c, t, n, _ = self.trajectories.shape
        if self.initial.shape[:2] != (c, n) or t != self.times.size:
            raise ShapeError(
                f"inconsistent shapes: initial {self.initial.shape}, "
                f"trajectories {self.trajectories.shape}, times {self.times.size}"
            )

    @property
    def count(self) -> int:
        return self.trajectories.shape[0]

    @property
    def grid(self) -> int:
        return self.trajectories.shape[2]

    @property
    def in_channels(self) -> int:
        return self.initial.shape[2]

    @property
    def out_channels(self) -> int:
        return self.trajectories.shape[3]

    def resampled(self, n_new: int) -> "TrajectoryDataset":
        """Inputs and targets spectrally resampled onto n_new grid points."""
        if n_new == self.grid:
            return self
        return TrajectoryDataset(
            self.problem, self.times,
            resample(self.initial, n_new, axis=1),
            resample(self.trajectories, n_new, axis=2),
            self.master_seed, self.first_index, self.spec, dict(self.meta),
        )


# ============================================================
# GENERATION
# ============================================================


def _constant_grid(values: np.ndarray, grid: int) -> np.ndarray:
    """[..., channels] -> [..., grid, channels] constant along the grid."""
    values = np.asarray(values, dtype=np.float64)
    return np.repeat(values[..., None, :], grid, axis=-2)


def solve_from_initial(spec: DataSpec, initial: np.ndarray, times) -> np.ndarray:
    """Ground-truth trajectory [|times|, grid, out_channels] from one stored initial function."""
    times = np.asarray(times, dtype=np.float64)
    p = spec.problem
    if p == "heat":
        return solve_heat(initial[:, 0], spec.nu, times)[..., None]
    if p == "burgers":
        return solve_burgers(initial[:, 0], spec.nu, spec.dt_solver, times)[..., None]
    if p == "reaction":
        return solve_reaction(initial[:, 0], spec.rho, times)[..., None]
    state = initial[0]
    grid = initial.shape[0]
    if p == "spiral":
        return _constant_grid(gen_spiral(state, times), grid)
    if p == "stiff":
        return _constant_grid(gen_stiff_vdp(state[0], times, mu=spec.mu, tol=spec.tol), grid)
    if p == "sawtooth":
        return _constant_grid(gen_sawtooth(state[0], times), grid)
    if p == "square":
        return _constant_grid(gen_square(state[0], times), grid)
    raise ConfigError(f"unknown problem: {p!r}")


def sample_initial(spec: DataSpec, rng: RngStream) -> np.ndarray:
    """Initial function [grid, in_channels] for one trajectory."""
    p = spec.problem
    if p in ("heat", "burgers"):
        return sample_grf(spec.grf, spec.n, rng)[:, None]
    if p == "reaction":
        return sample_reaction_initial(rng, spec.n)[:, None]
    if p == "spiral":
        state = rng.uniform(2, -spec.spiral_range, spec.spiral_range)
    elif p == "stiff":
        state = np.array([float(rng.uniform(None, *spec.stiff_x0)), 0.0])
    else:
        t0 = float(rng.uniform(None, 0.0, TWO_PI))
        value = sawtooth(t0) if p == "sawtooth" else square(t0)
        state = np.array([t0, float(value)])
    return _constant_grid(state, spec.ode_grid)


def build_trajectory(spec: DataSpec, index: int, master_seed: int, times: np.ndarray):
    rng = RngStream(master_seed, index, purpose="data")
    initial = sample_initial(spec, rng)
    return initial, solve_from_initial(spec, initial, times)


def build_dataset(spec: DataSpec, count: int, master_seed: int, first_index: int = 0,
                  times=None, n_jobs: int | None = None) -> TrajectoryDataset:
    """
    `count` trajectories using stream indices first_index, first_index + 1, ...

    Each index owns its RngStream, so the worker count never changes the bytes.
    """
    times = spec.sample_times() if times is None else np.asarray(times, dtype=np.float64)
    indices = range(first_index, first_index + count)
    results = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(build_trajectory)(spec, i, master_seed, times) for i in indices
    )
    d_in, d_out = spec.channels
    if results:
        initial = np.stack([r[0] for r in results])
        traj = np.stack([r[1] for r in results])
    else:
        initial = np.zeros((0, spec.grid, d_in))
        traj = np.zeros((0, times.size, spec.grid, d_out))
    return TrajectoryDataset(spec.problem, times, initial, traj, master_seed, first_index, spec)


def build_splits(spec: DataSpec, master_seed: int) -> tuple[TrajectoryDataset, TrajectoryDataset]:
    """Train uses indices [0, n_train), test continues at n_train."""
    train = build_dataset(spec, spec.n_train, master_seed, 0)
    test = build_dataset(spec, spec.n_test, master_seed, spec.n_train)
    return train, test


# ============================================================
# DISK FORMAT
# ============================================================


def save_dataset(ds: TrajectoryDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "problem": ds.problem,
        "count": ds.count,
        "grid": ds.grid,
        "in_channels": ds.in_channels,
        "out_channels": ds.out_channels,
        "data_shape": list(ds.trajectories.shape),
        "initial_shape": list(ds.initial.shape),
        "times": [float(t) for t in ds.times],
        "master_seed": ds.master_seed,
        "first_index": ds.first_index,
        "generator_version": GENERATOR_VERSION,
        "byte_order": "little",
        "dtype": "float64",
        "spec": ds.spec.model_dump(mode="json") if ds.spec is not None else None,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (path / "meta").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    np.ascontiguousarray(ds.trajectories, dtype="<f8").tofile(path / "data.bin")
    np.ascontiguousarray(ds.initial, dtype="<f8").tofile(path / "initial.bin")
    return path


def _read_block(path: Path, shape: list[int]) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    size = path.stat().st_size
    if size != expected:
        raise DatasetError(f"{path.name}: expected {expected} bytes for shape {shape}, found {size}")
    return np.fromfile(path, dtype="<f8").astype(np.float64).reshape(shape)


def load_dataset(path) -> TrajectoryDataset:
    path = Path(path)
    for name in ("meta", "data.bin", "initial.bin"):
        if not (path / name).is_file():
            raise DatasetError(f"{path}: missing '{name}'")
    try:
        meta = json.loads((path / "meta").read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path / 'meta'}: line {e.lineno} column {e.colno}: {e.msg}") from e

    try:
        spec = DataSpec.model_validate(meta["spec"]) if meta.get("spec") else None
        return TrajectoryDataset(
            problem=meta["problem"],
            times=np.asarray(meta["times"], dtype=np.float64),
            initial=_read_block(path / "initial.bin", meta["initial_shape"]),
            trajectories=_read_block(path / "data.bin", meta["data_shape"]),
            master_seed=int(meta["master_seed"]),
            first_index=int(meta.get("first_index", 0)),
            spec=spec,
            meta=meta,
        )
    except (KeyError, ValidationError) as e:
        raise DatasetError(f"{path / 'meta'}: malformed ({e})") from e
