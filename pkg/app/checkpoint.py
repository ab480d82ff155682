"""
Checkpoint container: `meta` (UTF-8 JSON) + `params.bin`.

params.bin holds little-endian float64 values, arrays concatenated in the
canonical order of ctfno.param_shapes, each row-major; complex arrays are
stored as interleaved (re, im) pairs.
"""

import datetime
import json
from pathlib import Path

import joblib
import numpy as np
from pydantic import ValidationError

from .ctfno import CtfnoConfig, CtfnoParams, param_shapes
from .errors import DatasetError
from .training import OptimState


def _flatten(params: CtfnoParams) -> np.ndarray:
    parts = []
    for name in param_shapes(params.config):
        a = np.ascontiguousarray(params[name])
        parts.append(a.view(np.float64).reshape(-1) if np.iscomplexobj(a) else a.reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0)


def save_checkpoint(path, params: CtfnoParams, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params.check()
    doc = {
        "format": "ctfno-checkpoint",
        "model": params.config.model_dump(mode="json"),
        "order": list(param_shapes(params.config)),
        **(meta or {}),
        "saved_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (path / "meta").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    np.ascontiguousarray(_flatten(params), dtype="<f8").tofile(path / "params.bin")
    return path


def load_checkpoint(path) -> tuple[CtfnoParams, dict]:
    path = Path(path)
    for name in ("meta", "params.bin"):
        if not (path / name).is_file():
            raise DatasetError(f"{path}: missing '{name}'")
    try:
        meta = json.loads((path / "meta").read_text(encoding="utf-8"))
        config = CtfnoConfig.model_validate(meta["model"])
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path / 'meta'}: line {e.lineno} column {e.colno}: {e.msg}") from e
    except (KeyError, ValidationError) as e:
        raise DatasetError(f"{path / 'meta'}: malformed ({e})") from e

    flat = np.fromfile(path / "params.bin", dtype="<f8").astype(np.float64)
    shapes = param_shapes(config)
    expected = sum(int(np.prod(s)) * (2 if t is np.complex128 else 1) for s, t in shapes.values())
    if flat.size != expected:
        raise DatasetError(f"{path / 'params.bin'}: expected {expected} values, found {flat.size}")

    arrays, offset = {}, 0
    for name, (shape, dtype) in shapes.items():
        size = int(np.prod(shape))
        if dtype is np.complex128:
            chunk = flat[offset:offset + 2 * size].copy()
            arrays[name] = chunk.view(np.complex128).reshape(shape)
            offset += 2 * size
        else:
            arrays[name] = flat[offset:offset + size].reshape(shape).copy()
            offset += size
    return CtfnoParams(config, arrays), meta


# ============================================================
# OPTIMIZER STATE (resume only, not part of the normative format)
# ============================================================

OPTIM_FILE = "optim.joblib"


def save_optim_state(path, state: OptimState) -> Path:
    path = Path(path) / OPTIM_FILE
    joblib.dump({"m": state.m, "v": state.v, "step": state.step}, path)
    return path


def load_optim_state(path) -> OptimState | None:
    path = Path(path) / OPTIM_FILE
    if not path.is_file():
        return None
    try:
        raw = joblib.load(path)
    except Exception as e:
        print(f"[CHECKPOINT] could not read {path}: {e}")
        return None
    return OptimState(m=raw["m"], v=raw["v"], step=int(raw["step"]))
