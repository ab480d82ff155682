"""
Continuous-time Fourier neural operator.

a --P--> v0 --L_1(t)--> ... --L_L(t)--> v_L --Q--> u(t)

Layer l at time t:
    v <- act( W_l (s_l(t) * v) + b_l + iDFT( phi_l(t, xi) R_l(xi) DFT(v) ) )
where s_l(t) = B_l psi(t), phi_l(t, xi) = phi(t)^T A_l(xi) per head, and
phi(t), psi(t) come from two shared sinusoidal-embedding encoders.

Arrays are laid out [batch, time, grid, channel]; every sample time is an
independent slice, nothing couples two times.
"""

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .autograd import Tape, record
from .errors import ConfigError, ShapeError
from .rng import RngStream
from .spectral import ActivationKind

# ============================================================
# CONFIG
# ============================================================


class CtfnoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: int = Field(2, ge=1)
    modes: int = Field(16, ge=1)
    channels: int = Field(32, ge=1)
    in_channels: int = Field(1, ge=1)
    out_channels: int = Field(1, ge=1)
    time_hidden: int = Field(32, ge=1)
    time_sinusoid: int = Field(16, ge=1)
    heads: int = Field(1, ge=1)
    padding: int = Field(0, ge=0)
    stabilization: float | None = Field(None, gt=0)
    activation: ActivationKind = "gelu"
    # False gives the plain Fourier layer stack (no encoders, A or B)
    time_modulation: bool = True

    @model_validator(mode="after")
    def _heads_divide_channels(self):
        if self.channels % self.heads:
            raise ValueError(f"channels={self.channels} not divisible by heads={self.heads}")
        return self

    @property
    def head_width(self) -> int:
        return self.channels // self.heads


def param_shapes(config: CtfnoConfig) -> dict[str, tuple[tuple[int, ...], type]]:
    """Canonical parameter order, shapes and dtypes. Checkpoints follow this order."""
    dv, da, du = config.channels, config.in_channels, config.out_channels
    k, h, dk = config.modes, config.heads, config.head_width
    c, m = config.time_hidden, config.time_sinusoid

    shapes: dict[str, tuple[tuple[int, ...], type]] = {
        "P": ((dv, da), np.float64),
        "Q": ((du, dv), np.float64),
    }
    for l in range(config.layers):
        shapes[f"layers.{l}.W"] = ((dv, dv), np.float64)
        shapes[f"layers.{l}.b"] = ((dv,), np.float64)
        shapes[f"layers.{l}.R"] = ((k, h, dk, dv), np.complex128)
        if config.time_modulation:
            shapes[f"layers.{l}.A"] = ((c, k, h), np.complex128)
            shapes[f"layers.{l}.B"] = ((dv, c), np.float64)
    if config.time_modulation:
        for enc in ("phi_enc", "psi_enc"):
            shapes[f"{enc}.W1"] = ((c, 2 * m), np.float64)
            shapes[f"{enc}.b1"] = ((c,), np.float64)
            shapes[f"{enc}.W2"] = ((c, c), np.float64)
            shapes[f"{enc}.b2"] = ((c,), np.float64)
    return shapes


def param_count(config: CtfnoConfig) -> int:
    """Real scalars in the model; complex entries count twice."""
    dv, da, du = config.channels, config.in_channels, config.out_channels
    k, h, c, m = config.modes, config.heads, config.time_hidden, config.time_sinusoid
    # h * head_width == dv, so each R_l holds 2 * k * dv^2 reals
    per_layer = dv * dv + dv + 2 * k * dv * dv
    total = dv * da + du * dv
    if not config.time_modulation:
        return total + config.layers * per_layer
    per_layer += 2 * c * k * h + dv * c
    encoders = 2 * (2 * m * c + c + c * c + c)
    return total + config.layers * per_layer + encoders


# ============================================================
# PARAMETERS
# ============================================================


@dataclass
class CtfnoParams:
    config: CtfnoConfig
    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "CtfnoParams":
        return CtfnoParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def replace(self, **updates: np.ndarray) -> "CtfnoParams":
        arrays = dict(self.arrays)
        arrays.update(updates)
        return CtfnoParams(self.config, arrays)

    def check(self):
        expected = param_shapes(self.config)
        if list(expected) != list(self.arrays):
            raise ShapeError(f"parameter names {list(self.arrays)} != {list(expected)}")
        for name, (shape, _) in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.arrays[name].shape}")


def init_params(config: CtfnoConfig, seed: int = 0, scheme: str = "random") -> CtfnoParams:
    """
    Fresh parameters.

    scheme="random": weights uniform(+-1/sqrt(fan_in)), layer biases zero,
    R parts normal with variance 1/(channels * modes), A parts normal with
    variance 1/time_hidden. scheme="zeros": every array zero.
    """
    shapes = param_shapes(config)
    if scheme == "zeros":
        return CtfnoParams(config, {n: np.zeros(s, dtype=t) for n, (s, t) in shapes.items()})
    if scheme != "random":
        raise ConfigError(f"unknown init scheme: {scheme}")

    rng = RngStream(seed, 0, purpose="init")
    bias_fan = {"b1": 2 * config.time_sinusoid, "b2": config.time_hidden}
    arrays: dict[str, np.ndarray] = {}
    for name, (shape, dtype) in shapes.items():
        if name.endswith(".R") or name.endswith(".A"):
            var = 1.0 / (config.channels * config.modes) if name.endswith(".R") else 1.0 / config.time_hidden
            std = np.sqrt(var)
            arrays[name] = std * (rng.normal(shape) + 1j * rng.normal(shape))
        elif name.startswith("layers.") and name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            fan = bias_fan.get(name.rsplit(".", 1)[-1], shape[-1])
            bound = 1.0 / np.sqrt(fan)
            arrays[name] = rng.uniform(shape, -bound, bound)
    return CtfnoParams(config, arrays)


def freeze_time_encoders(params: CtfnoParams) -> CtfnoParams:
    """Encoders emitting all ones, with A_l and B_l making every modulation exactly 1."""
    cfg = params.config
    if not cfg.time_modulation:
        return params.copy()
    out = params.copy()
    c = cfg.time_hidden
    for enc in ("phi_enc", "psi_enc"):
        out.arrays[f"{enc}.W2"] = np.zeros((c, c))
        out.arrays[f"{enc}.b2"] = np.ones(c)
    for l in range(cfg.layers):
        A = np.zeros_like(out.arrays[f"layers.{l}.A"])
        A[0] = 1.0
        B = np.zeros_like(out.arrays[f"layers.{l}.B"])
        B[:, 0] = 1.0
        out.arrays[f"layers.{l}.A"] = A
        out.arrays[f"layers.{l}.B"] = B
    return out


def without_time_modulation(params: CtfnoParams) -> CtfnoParams:
    """Same P, Q, W, b, R under a config with time_modulation=False."""
    cfg = params.config.model_copy(update={"time_modulation": False})
    keep = param_shapes(cfg)
    return CtfnoParams(cfg, {n: params.arrays[n].copy() for n in keep})


# ============================================================
# TIME ENCODERS
# ============================================================


def sinusoidal_embed(t, m: int) -> np.ndarray:
    """(sin(w_i t), cos(w_i t)) interleaved per i, w_i = 10^(-4i/m). Shape [..., 2m]."""
    if m < 1:
        raise ConfigError(f"time_sinusoid must be >= 1, got {m}")
    t = np.asarray(t, dtype=np.float64)
    omega = 10.0 ** (-4.0 * np.arange(m) / m)
    arg = t[..., None] * omega
    out = np.empty(t.shape + (2 * m,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def _encoder(tape: Tape, slots: dict[str, int], enc: str, emb: int) -> int:
    h = record(tape, "add", record(tape, "linear", emb, slots[f"{enc}.W1"]), slots[f"{enc}.b1"])
    h = record(tape, "activation", h, kind="silu")
    return record(tape, "add", record(tape, "linear", h, slots[f"{enc}.W2"]), slots[f"{enc}.b2"])


def _encode_times(tape: Tape, slots: dict[str, int], config: CtfnoConfig, times) -> tuple[int, int]:
    emb = tape.constant(sinusoidal_embed(np.asarray(times, dtype=np.float64), config.time_sinusoid))
    return _encoder(tape, slots, "phi_enc", emb), _encoder(tape, slots, "psi_enc", emb)


def time_encode(t, params: CtfnoParams) -> tuple[np.ndarray, np.ndarray]:
    """(phi(t), psi(t)), each of shape t.shape + (time_hidden,)."""
    tape = Tape(record=False)
    slots = _place(tape, params)
    phi, psi = _encode_times(tape, slots, params.config, t)
    return tape.value(phi), tape.value(psi)


# ============================================================
# FORWARD
# ============================================================


def _place(tape: Tape, params: CtfnoParams) -> dict[str, int]:
    return {name: tape.param(name, value) for name, value in params.arrays.items()}


def _check_modes(config: CtfnoConfig, n: int):
    if n < 2 * config.modes:
        raise ConfigError(f"grid {n} (with padding) cannot hold modes={config.modes}; need >= {2 * config.modes}")


def _layer(tape: Tape, slots: dict[str, int], config: CtfnoConfig, l: int,
           v: int, phi: int | None, psi: int | None) -> int:
    """One layer on a [batch, time, grid, channel] slot."""
    n = tape.value(v).shape[2]
    pre = f"layers.{l}"

    # local path: W_l (s_l(t) * v)
    if psi is not None:
        s = record(tape, "linear", psi, slots[f"{pre}.B"])
        t_count = tape.value(s).shape[0]
        s = record(tape, "reshape", s, shape=(1, t_count, 1, config.channels))
        local = record(tape, "linear", record(tape, "mul", v, s), slots[f"{pre}.W"])
    else:
        local = record(tape, "linear", v, slots[f"{pre}.W"])

    # spectral path, modes >= k_max pass as zero
    xhat = record(tape, "rfft", v, axis=2)
    xhat = record(tape, "truncate", xhat, size=config.modes, axis=2)
    if phi is not None:
        mod = record(tape, "einsum", phi, slots[f"{pre}.A"], spec="tc,ckh->tkh")
        y = record(tape, "spectral_mul", xhat, slots[f"{pre}.R"], mod)
    else:
        y = record(tape, "spectral_mul", xhat, slots[f"{pre}.R"])
    y = record(tape, "pad", y, size=n // 2 + 1, axis=2)
    spectral = record(tape, "irfft", y, n=n, axis=2)

    out = record(tape, "add", record(tape, "add", local, spectral), slots[f"{pre}.b"])
    return record(tape, "activation", out, kind=config.activation)


def build_forward(tape: Tape, slots: dict[str, int], config: CtfnoConfig, a, times) -> int:
    """Record the full forward pass; returns the [batch, time, grid, d_u] slot."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != config.in_channels:
        raise ShapeError(f"input must be [batch, grid, {config.in_channels}], got {a.shape}")
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(times)):
        raise ShapeError("sample times must be finite")
    batch, grid, _ = a.shape
    n = grid + config.padding
    _check_modes(config, n)

    phi = psi = None
    if config.time_modulation:
        phi, psi = _encode_times(tape, slots, config, times)

    v = record(tape, "linear", tape.constant(a), slots["P"])
    v = record(tape, "reshape", v, shape=(batch, 1, grid, config.channels))
    v = record(tape, "broadcast", v, shape=(batch, len(times), grid, config.channels))
    if config.padding:
        v = record(tape, "pad", v, size=n, axis=2)
    for l in range(config.layers):
        v = _layer(tape, slots, config, l, v, phi, psi)
    if config.padding:
        v = record(tape, "truncate", v, size=grid, axis=2)
    return record(tape, "linear", v, slots["Q"])


def forward(params: CtfnoParams, a, times) -> np.ndarray:
    """Predictions [batch, |times|, grid, d_u] without recording a tape."""
    config = params.config
    a = np.asarray(a, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        if a.ndim != 3:
            raise ShapeError(f"input must be [batch, grid, channels], got {a.shape}")
        return np.zeros((a.shape[0], 0, a.shape[1], config.out_channels))
    tape = Tape(record=False)
    return tape.value(build_forward(tape, _place(tape, params), config, a, times))


def layer_forward(params: CtfnoParams, v, t: float, layer: int) -> np.ndarray:
    """Layer `layer` at a single time on v of shape [batch, grid, channels]."""
    config = params.config
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3 or v.shape[2] != config.channels:
        raise ShapeError(f"layer input must be [batch, grid, {config.channels}], got {v.shape}")
    _check_modes(config, v.shape[1])
    tape = Tape(record=False)
    slots = _place(tape, params)
    phi = psi = None
    if config.time_modulation:
        phi, psi = _encode_times(tape, slots, config, [t])
    vs = tape.constant(v[:, None])
    out = _layer(tape, slots, config, layer, vs, phi, psi)
    return tape.value(out)[:, 0]


# ============================================================
# STABILIZATION
# ============================================================


def _project_rows(mat: np.ndarray, bound: float) -> np.ndarray:
    """Scale rows (last axis) whose L1 norm exceeds `bound`; feasible rows stay bit-identical."""
    norms = np.abs(mat).sum(axis=-1, keepdims=True)
    over = norms > bound
    if not over.any():
        return mat.copy()
    factor = np.where(over, bound / np.where(over, norms, 1.0), 1.0)
    out = mat * factor
    # nudge factors down until rounding no longer leaves a row above bound
    for _ in range(16):
        bad = np.abs(out).sum(axis=-1, keepdims=True) > bound
        if not bad.any():
            break
        factor = np.where(bad, np.nextafter(factor, 0.0), factor)
        out = mat * factor
    return out


def kernel_matrices(R: np.ndarray) -> np.ndarray:
    """R_l as one [modes, channels, channels] matrix per retained mode (heads stacked as rows)."""
    k, h, dk, dv = R.shape
    return R.reshape(k, h * dk, dv)


def gershgorin_normalize(params: CtfnoParams, bound: float) -> CtfnoParams:
    """Rows of every W_l and every R_l(xi) scaled to L1 norm <= bound (complex rows by moduli)."""
    if not bound > 0:
        raise ConfigError(f"stabilization bound must be > 0, got {bound}")
    out = params.copy()
    for l in range(params.config.layers):
        out.arrays[f"layers.{l}.W"] = _project_rows(params[f"layers.{l}.W"], bound)
        out.arrays[f"layers.{l}.R"] = _project_rows(params[f"layers.{l}.R"], bound)
    return out


def row_norm_max(params: CtfnoParams) -> float:
    """Largest row L1 norm over every W_l and R_l(xi)."""
    worst = 0.0
    for l in range(params.config.layers):
        worst = max(worst, float(np.abs(params[f"layers.{l}.W"]).sum(axis=-1).max()))
        worst = max(worst, float(np.abs(params[f"layers.{l}.R"]).sum(axis=-1).max()))
    return worst

