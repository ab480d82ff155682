"""
Experiment drivers behind the CLI: generate, train, eval, probe, report.

Every command writes long-format CSV rows keyed by (problem, config_hash,
seed) with `metric` / `value` columns; `report` pivots and aggregates them.
"""

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .checkpoint import load_checkpoint, load_optim_state, save_checkpoint, save_optim_state
from .config import ARTIFACTS_DIR, PRESETS_DIR, SEED
from .ctfno import CtfnoConfig, init_params, param_count
from .datasets import PROBLEMS, DataSpec, TrajectoryDataset, build_splits, load_dataset, save_dataset, solve_from_initial
from .errors import ConfigError, ReportError, ShapeError
from .logger import log_run
from .stability import probe, row_radii
from .training import TrainConfig, evaluate_rmse, train

RUN_KEYS = ["problem", "config_hash", "seed"]
LONG_COLUMNS = RUN_KEYS + ["metric", "value"]
METRIC_ORDER = [
    "final_train_rmse", "final_train_mse", "test_rmse", "eval_rmse",
    "probe_max_ratio", "probe_mean_ratio", "probe_bound", "noisy_rmse",
    "param_count", "epochs",
]
FLOAT_FORMAT = "%.17g"


# ============================================================
# EXPERIMENT CONFIG
# ============================================================

class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: str | None = None
    dataset: str | None = None
    out: str | None = None
    report_format: Literal["csv"] = "csv"
    data: dict = Field(default_factory=dict)
    model: CtfnoConfig = Field(default_factory=CtfnoConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


def _validation_message(e: ValidationError) -> str:
    err = e.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err['msg']}" if loc else err["msg"]


def resolve_config_path(ref: str) -> Path:
    """A path, or the name of a shipped preset."""
    path = Path(ref)
    if path.is_file():
        return path
    preset = Path(PRESETS_DIR) / f"{ref}.json"
    if preset.is_file():
        return preset
    raise ConfigError(f"config not found: {ref}")


def load_experiment(ref: str) -> ExperimentConfig:
    path = resolve_config_path(ref)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_validation_message(e)}") from e


def config_hash(model: CtfnoConfig, train_cfg: TrainConfig) -> str:
    """Seed-free, so repeated runs of one config share a hash."""
    doc = {"model": model.model_dump(mode="json"), "train": train_cfg.model_dump(mode="json", exclude={"seed"})}
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(raw.encode("utf-8")).hexdigest()[:12]


def _long_rows(problem: str, chash: str, seed: int, metrics: dict) -> pd.DataFrame:
    rows = [{"problem": problem, "config_hash": chash, "seed": seed, "metric": k, "value": float(v)}
            for k, v in metrics.items() if v is not None]
    return pd.DataFrame(rows, columns=LONG_COLUMNS)


def _write_csv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _require_dir(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} path given")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} path does not exist: {path}")
    return path


def _open_splits(path) -> tuple[TrajectoryDataset, TrajectoryDataset | None]:
    """<path>/train and <path>/test when present, else <path> alone."""
    path = _require_dir(path, "dataset")
    if (path / "train").is_dir():
        test = load_dataset(path / "test") if (path / "test").is_dir() else None
        return load_dataset(path / "train"), test
    return load_dataset(path), None


def _open_split(path, split: str | None) -> TrajectoryDataset:
    train_ds, test_ds = _open_splits(path)
    if split == "train" or (split is None and test_ds is None):
        return train_ds
    if test_ds is None:
        raise ConfigError(f"{path} has no test split")
    return test_ds


# ============================================================
# GENERATE
# ============================================================

def cmd_generate(problem: str | None, out, seed: int | None = None, config: str | None = None,
                 **overrides) -> dict:
    """Writes <out>/train and <out>/test; returns a summary dict."""
    data_overrides = {}
    if config is not None:
        exp = load_experiment(config)
        problem = problem or exp.problem
        data_overrides.update(exp.data)
    if problem is None:
        raise ConfigError("--problem is required")
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem: {problem!r} (expected one of {', '.join(PROBLEMS)})")
    data_overrides.update({k: v for k, v in overrides.items() if v is not None})
    spec = DataSpec.for_problem(problem, **data_overrides)
    seed = SEED if seed is None else seed
    out = Path(out or Path(ARTIFACTS_DIR) / "data" / problem)

    print(f"[GENERATE] {problem}: grid={spec.grid} train={spec.n_train} test={spec.n_test} seed={seed}")
    train_ds, test_ds = build_splits(spec, seed)
    try:
        save_dataset(train_ds, out / "train")
        save_dataset(test_ds, out / "test")
    except OSError as e:
        raise ConfigError(f"cannot write dataset to {out}: {e}") from e

    summary = {"problem": problem, "out": str(out), "times": int(train_ds.times.size),
               "grid": spec.grid, "n_train": spec.n_train, "n_test": spec.n_test, "seed": seed}
    print(f"[GENERATE] wrote {out} ({summary['times']} sample times)")
    log_run("generate", problem, None, seed, {}, summary)
    return summary


# ============================================================
# TRAIN
# ============================================================

def _resume_from(path, model_cfg: CtfnoConfig, train_cfg: TrainConfig):
    path = _require_dir(path, "checkpoint")
    params, meta = load_checkpoint(path)
    if params.config != model_cfg:
        raise ConfigError(f"{path}: model config differs from the checkpoint")
    if int(meta.get("seed", train_cfg.seed)) != train_cfg.seed:
        raise ConfigError(f"{path}: checkpoint seed {meta.get('seed')} differs from {train_cfg.seed}")
    state = load_optim_state(path)
    if state is None:
        raise ConfigError(f"{path}: no optimizer state to resume from")
    start = int(meta.get("epoch", 0))
    if start > train_cfg.epochs:
        raise ConfigError(f"{path}: checkpoint is at epoch {start}, past train.epochs={train_cfg.epochs}")
    hist_path = path.parent / "history.csv"
    previous = pd.read_csv(hist_path) if hist_path.is_file() else None
    print(f"[TRAIN] resuming {path} at epoch {start}")
    return params, state, start, previous


def cmd_train(config: str, dataset=None, out=None, seed: int | None = None, resume=None) -> dict:
    """
    Fresh run, or with `resume` a checkpoint directory whose parameters,
    optimizer state and epoch counter are continued up to `train.epochs`.
    """
    exp = load_experiment(config)
    dataset = dataset or exp.dataset
    train_ds, test_ds = _open_splits(dataset)

    train_cfg = exp.train if seed is None else exp.train.model_copy(update={"seed": seed})
    model_cfg = exp.model.model_copy(update={
        "in_channels": train_ds.in_channels,
        "out_channels": train_ds.out_channels,
    })
    if exp.problem and exp.problem != train_ds.problem:
        raise ConfigError(f"config is for {exp.problem!r} but dataset holds {train_ds.problem!r}")
    chash = config_hash(model_cfg, train_cfg)
    out = Path(out or exp.out or Path(ARTIFACTS_DIR) / "runs" / f"{train_ds.problem}-{chash}-s{train_cfg.seed}")

    print(f"[TRAIN] {train_ds.problem} config={chash} params={param_count(model_cfg)} "
          f"epochs={train_cfg.epochs} seed={train_cfg.seed}")
    params, state, start, previous = init_params(model_cfg, seed=train_cfg.seed), None, 0, None
    if resume is not None:
        params, state, start, previous = _resume_from(resume, model_cfg, train_cfg)
    result = train(params, train_ds, train_cfg, test=test_ds, state=state, start_epoch=start)

    history = result.history if previous is None else pd.concat([previous, result.history], ignore_index=True)
    final_test = float(history["test_rmse"].iloc[-1]) if len(history) else None
    if final_test is not None and np.isnan(final_test):
        final_test = None
    meta = {
        "problem": train_ds.problem,
        "config_hash": chash,
        "seed": train_cfg.seed,
        "train": train_cfg.model_dump(mode="json"),
        "epoch": train_cfg.epochs,
        "dataset": str(dataset),
        "grid": train_ds.grid,
        "final_train_rmse": result.final_train_rmse,
        "final_test_rmse": final_test,
        "rng": {"shuffle_seed": train_cfg.seed, "next_epoch": train_cfg.epochs},
        "optimizer_step": result.state.step,
    }
    save_checkpoint(out / "checkpoint", result.params, meta)
    save_optim_state(out / "checkpoint", result.state)
    _write_csv(history, out / "history.csv")

    metrics = {
        "final_train_rmse": result.final_train_rmse,
        "final_train_mse": float(history["train_mse"].iloc[-1]) if len(history) else None,
        "test_rmse": final_test,
        "param_count": param_count(model_cfg),
        "epochs": train_cfg.epochs,
    }
    _write_csv(_long_rows(train_ds.problem, chash, train_cfg.seed, metrics), out / "summary.csv")
    print(f"[TRAIN] done: train_rmse={result.final_train_rmse:.4e} test_rmse={final_test} -> {out}")
    log_run("train", train_ds.problem, chash, train_cfg.seed, metrics, {"out": str(out)})
    return {"out": str(out), "config_hash": chash, **metrics}


# ============================================================
# EVAL
# ============================================================

def _check_compatible(params, ds: TrajectoryDataset, meta: dict):
    cfg = params.config
    if ds.in_channels != cfg.in_channels or ds.out_channels != cfg.out_channels:
        raise ShapeError(
            f"checkpoint expects {cfg.in_channels}->{cfg.out_channels} channels, "
            f"dataset has {ds.in_channels}->{ds.out_channels}"
        )
    if meta.get("problem") and meta["problem"] != ds.problem:
        raise ShapeError(f"checkpoint trained on {meta['problem']!r}, dataset holds {ds.problem!r}")


def cmd_eval(checkpoint, dataset, resolution: int | None = None, times_scale: float | None = None,
             out=None, split: str | None = None) -> dict:
    """
    Pooled RMSE of a checkpoint. --resolution resamples inputs and targets
    spectrally; --times-scale evaluates at scaled sample times against
    regenerated ground truth.
    """
    params, meta = load_checkpoint(_require_dir(checkpoint, "checkpoint"))
    ds = _open_split(dataset, split)
    _check_compatible(params, ds, meta)
    chunk = int(meta.get("train", {}).get("chunk_size", 4))

    if resolution is not None:
        if resolution < 2:
            raise ConfigError(f"--resolution must be >= 2, got {resolution}")
        ds = ds.resampled(resolution)

    times, targets = ds.times, None
    if times_scale is not None and times_scale != 1.0:
        if ds.spec is None:
            raise ConfigError("dataset meta has no generator spec; cannot regenerate ground truth")
        times = ds.times * times_scale
        targets = np.stack([solve_from_initial(ds.spec, ds.initial[i], times) for i in range(ds.count)])

    value = evaluate_rmse(params, ds, chunk, times=times, targets=targets)
    chash, seed = meta.get("config_hash", ""), int(meta.get("seed", 0))
    row = {
        "problem": ds.problem, "config_hash": chash, "seed": seed,
        "resolution": ds.grid, "times_scale": times_scale or 1.0, "rmse": value,
    }
    print(f"[EVAL] {ds.problem} grid={ds.grid} times_scale={row['times_scale']:g} rmse={value:.6e}")
    if out is not None:
        metric = "eval_rmse"
        if resolution is not None and resolution != meta.get("grid"):
            metric += f"_n{resolution}"
        if row["times_scale"] != 1.0:
            metric += f"_t{row['times_scale']:g}"
        _write_csv(_long_rows(ds.problem, chash, seed, {metric: value}), Path(out) / "eval.csv")
    log_run("eval", ds.problem, chash, seed, {"rmse": value}, row)
    return row


# ============================================================
# PROBE
# ============================================================

def cmd_probe_stability(checkpoint, dataset, epsilon: float, trials: int, seed: int | None = None,
                        out=None, split: str | None = None) -> dict:
    if not epsilon > 0:
        raise ConfigError(f"--epsilon must be > 0, got {epsilon}")
    if trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {trials}")
    params, meta = load_checkpoint(_require_dir(checkpoint, "checkpoint"))
    ds = _open_split(dataset, split)
    _check_compatible(params, ds, meta)

    seed = SEED if seed is None else seed
    result = probe(params, ds.initial, ds.times, epsilon, trials, seed=seed, targets=ds.trajectories)
    report = {**result.as_dict(), "row_radii": row_radii(params), "problem": ds.problem}
    print(f"[PROBE] eps={epsilon:g} trials={trials} max_ratio={result.max_ratio:.4e} "
          f"mean_ratio={result.mean_ratio:.4e} bound={result.bound:.4e}")

    chash, run_seed = meta.get("config_hash", ""), int(meta.get("seed", 0))
    metrics = {
        "probe_max_ratio": result.max_ratio,
        "probe_mean_ratio": result.mean_ratio,
        "probe_bound": result.bound,
        "noisy_rmse": result.noisy_rmse,
    }
    if out is not None:
        _write_csv(_long_rows(ds.problem, chash, run_seed, metrics), Path(out) / "probe.csv")
        radii = pd.DataFrame(report["row_radii"], columns=["layer", "W", "R"])
        _write_csv(radii, Path(out) / "row_radii.csv")
    log_run("probe", ds.problem, chash, run_seed, metrics, {"epsilon": epsilon, "trials": trials})
    return report


# ============================================================
# REPORT
# ============================================================

def _read_long(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"problem": str, "config_hash": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ReportError(f"{path}: {e}") from e
    missing = [c for c in LONG_COLUMNS if c not in df.columns]
    if missing:
        raise ReportError(f"{path}: missing columns {missing}")
    values = pd.to_numeric(df["value"], errors="coerce")
    if values.isna().any():
        raise ReportError(f"{path}: non-numeric value in row {int(values.isna().idxmax()) + 2}")
    df = df[LONG_COLUMNS].copy()
    df["value"] = values
    df["config_hash"] = df["config_hash"].fillna("")
    return df


def _collect(inputs) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(f for f in p.rglob("*.csv") if f.name in ("summary.csv", "eval.csv", "probe.csv")))
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"report input does not exist: {p}")
    if not files:
        raise ReportError("no report inputs found")
    return files


def _ordered_metrics(columns) -> list[str]:
    known = [m for m in METRIC_ORDER if m in columns]
    return known + sorted(c for c in columns if c not in METRIC_ORDER)


def merge_runs(frames: list[pd.DataFrame]) -> pd.DataFrame:
    """Wide table keyed by (problem, config_hash, seed); later rows win on duplicates."""
    long = pd.concat(frames, ignore_index=True)
    wide = long.pivot_table(index=RUN_KEYS, columns="metric", values="value", aggfunc="last")
    wide = wide.reset_index()
    wide.columns.name = None
    return wide[RUN_KEYS + _ordered_metrics([c for c in wide.columns if c not in RUN_KEYS])]


def aggregate_runs(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation (ddof=1) per metric over seeds."""
    metrics = [c for c in runs.columns if c not in RUN_KEYS]
    grouped = runs.groupby(["problem", "config_hash"], sort=True)
    out = grouped.size().rename("runs").reset_index()
    for m in metrics:
        stats = grouped[m].agg(["mean", "std"]).reset_index()
        stats.columns = ["problem", "config_hash", f"{m}_mean", f"{m}_std"]
        out = out.merge(stats, on=["problem", "config_hash"], how="left")
    return out


def summary_table(agg: pd.DataFrame, metric: str = "test_rmse") -> str:
    """Configs as rows, problems as columns, cells 'mean ± std' in units of 1e-2."""
    col_mean, col_std = f"{metric}_mean", f"{metric}_std"
    if col_mean not in agg.columns:
        return f"(no {metric} values)\n"
    problems = sorted(agg["problem"].unique())
    configs = sorted(agg["config_hash"].unique())
    header = ["config"] + problems
    lines = [f"RMSE (x1e-2), metric={metric}", " | ".join(header), " | ".join("---" for _ in header)]
    for c in configs:
        cells = [c]
        for p in problems:
            hit = agg[(agg["problem"] == p) & (agg["config_hash"] == c)]
            if hit.empty or pd.isna(hit[col_mean].iloc[0]):
                cells.append("-")
                continue
            mean = 100.0 * hit[col_mean].iloc[0]
            std = hit[col_std].iloc[0]
            cells.append(f"{mean:.3f}" if pd.isna(std) else f"{mean:.3f} ± {100.0 * std:.3f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_report(inputs, out) -> dict:
    """runs.csv (wide, one row per run), aggregate.csv (mean/std per config) and summary.txt."""
    files = _collect(inputs)
    runs = merge_runs([_read_long(f) for f in files])
    agg = aggregate_runs(runs)
    out = Path(out or Path(ARTIFACTS_DIR) / "report")
    _write_csv(runs, out / "runs.csv")
    _write_csv(agg, out / "aggregate.csv")
    text = "".join(summary_table(agg, m) + "\n" for m in ("test_rmse", "eval_rmse") if f"{m}_mean" in agg.columns)
    (out / "summary.txt").write_text(text or summary_table(agg), encoding="utf-8")
    print(f"[REPORT] {len(files)} files, {len(runs)} runs -> {out}")
    return {"files": len(files), "runs": len(runs), "out": str(out)}
