"""
Reverse-mode differentiation over the fixed op set the model uses.

A Tape is a Wengert list: every `record` call evaluates its op eagerly,
stores the value in a new slot and appends a node. `backward` walks the
nodes in reverse and accumulates adjoints into the input slots.

Adjoint convention: a real slot's adjoint is dL/dx; a complex slot's
adjoint is dL/dRe + i*dL/dIm. With that convention the chain rule for
y = a*b gives a_bar = conj(b)*y_bar, and a real slot fed into a complex op
keeps only the real part of its incoming adjoint.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, ShapeError
from .spectral import activation, activation_grad, dft_forward, dft_inverse


# ============================================================
# TAPE
# ============================================================

@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)


class Tape:
    """Single-owner recording of one forward pass.

    `record=False` evaluates ops without keeping nodes (inference and
    finite-difference probes).
    """

    def __init__(self, record: bool = True):
        self.recording = record
        self.values: list[np.ndarray] = []
        self.requires: list[bool] = []
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self.grads: list[np.ndarray | None] = []

    def _push(self, value: np.ndarray, requires: bool) -> int:
        self.values.append(value)
        self.requires.append(requires)
        return len(self.values) - 1

    def param(self, name: str, value) -> int:
        if name in self.params:
            raise ContractError(f"parameter '{name}' already on tape")
        slot = self._push(_as_array(value), True)
        self.params[name] = slot
        return slot

    def constant(self, value) -> int:
        return self._push(_as_array(value), False)

    def value(self, slot: int) -> np.ndarray:
        return self.values[slot]

    def record(self, op: str, *inputs: int, **attrs) -> int:
        return record(self, op, *inputs, **attrs)


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _match(grad: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Cast an incoming adjoint to the slot's field (real slots drop Im)."""
    if not np.iscomplexobj(like) and np.iscomplexobj(grad):
        return np.ascontiguousarray(grad.real)
    return grad


def _resize(x: np.ndarray, size: int, axis: int) -> np.ndarray:
    """Slice or zero-extend `axis` to `size`."""
    cur = x.shape[axis]
    if size <= cur:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(0, size)
        return np.ascontiguousarray(x[tuple(idx)])
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.dtype)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, cur)
    out[tuple(idx)] = x
    return out


# ============================================================
# FORWARD TABLE
# ============================================================

def _f_add(node, a, b):
    return a + b


def _f_sub(node, a, b):
    return a - b


def _f_mul(node, a, b):
    return a * b


def _f_scale(node, a):
    return node.attrs["alpha"] * a


def _f_matmul(node, a, b):
    return np.matmul(a, b)


def _f_linear(node, x, w):
    return x @ w.T


def _f_einsum(node, a, b):
    return np.einsum(node.attrs["spec"], a, b, optimize=True)


def _f_spectral_mul(node, xhat, r, *mod):
    # Z[..., k, h, o] = sum_i R[k, h, o, i] * xhat[..., k, i]
    k, h, dk, dv = r.shape
    z = np.einsum("khoi,...ki->...kho", r, xhat, optimize=True)
    node.cache["z"] = z
    if mod:
        z = z * mod[0][..., None]
    return z.reshape(xhat.shape[:-1] + (h * dk,))


def _f_rfft(node, x):
    return dft_forward(x, axis=node.attrs.get("axis", -1))


def _f_irfft(node, spec):
    return dft_inverse(spec, node.attrs["n"], axis=node.attrs.get("axis", -1))


def _f_truncate(node, x):
    return _resize(x, node.attrs["size"], node.attrs.get("axis", -1))


def _f_activation(node, x):
    return activation(x, node.attrs["kind"])


def _f_broadcast(node, x):
    return np.ascontiguousarray(np.broadcast_to(x, node.attrs["shape"]))


def _f_reshape(node, x):
    return x.reshape(node.attrs["shape"])


def _f_sum(node, x):
    return np.sum(x, axis=node.attrs.get("axis"))


def _f_mean(node, x):
    return np.mean(x, axis=node.attrs.get("axis"))


def _f_square(node, x):
    return x * x


def _f_mse(node, pred, target):
    diff = pred - target
    node.cache["diff"] = diff
    return np.mean(diff * diff)


_FORWARD: dict[str, Callable] = {
    "add": _f_add,
    "sub": _f_sub,
    "mul": _f_mul,
    "scale": _f_scale,
    "matmul": _f_matmul,
    "linear": _f_linear,
    "einsum": _f_einsum,
    "spectral_mul": _f_spectral_mul,
    "rfft": _f_rfft,
    "irfft": _f_irfft,
    "truncate": _f_truncate,
    "pad": _f_truncate,
    "activation": _f_activation,
    "broadcast": _f_broadcast,
    "reshape": _f_reshape,
    "sum": _f_sum,
    "mean": _f_mean,
    "square": _f_square,
    "mse": _f_mse,
}


# ============================================================
# BACKWARD TABLE
# each entry returns one adjoint per input (None = not needed)
# ============================================================

def _b_add(node, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _b_sub(node, g, a, b):
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def _b_mul(node, g, a, b):
    return _unbroadcast(g * np.conj(b), a.shape), _unbroadcast(g * np.conj(a), b.shape)


def _b_scale(node, g, a):
    return (node.attrs["alpha"] * g,)


def _b_matmul(node, g, a, b):
    if b.ndim == 1:
        ga = g[..., :, None] * np.conj(b)[None, :]
        gb = np.matmul(np.conj(np.swapaxes(a, -1, -2)), g[..., None])[..., 0]
    else:
        ga = np.matmul(g, np.conj(np.swapaxes(b, -1, -2)))
        gb = np.matmul(np.conj(np.swapaxes(a, -1, -2)), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _b_linear(node, g, x, w):
    gx = g @ np.conj(w)
    gw = np.einsum("...o,...i->oi", g, np.conj(x), optimize=True)
    return gx, gw


def _b_einsum(node, g, a, b):
    spec = node.attrs["spec"]
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    ga = np.einsum(f"{out},{sb}->{sa}", g, np.conj(b), optimize=True)
    gb = np.einsum(f"{out},{sa}->{sb}", g, np.conj(a), optimize=True)
    return ga, gb


def _b_spectral_mul(node, g, xhat, r, *mod):
    k, h, dk, dv = r.shape
    gz = g.reshape(g.shape[:-1] + (h, dk))
    z = node.cache["z"]
    if mod:
        m = mod[0]
        gm = np.sum(gz * np.conj(z), axis=-1)
        gm = _unbroadcast(gm, m.shape)
        gz = gz * np.conj(m)[..., None]
    else:
        gm = None
    gx = np.einsum("khoi,...kho->...ki", np.conj(r), gz, optimize=True)
    lead = "".join("abcdefg"[i] for i in range(xhat.ndim - 2))
    gr = np.einsum(f"{lead}kho,{lead}ki->khoi", gz, np.conj(xhat), optimize=True)
    grads = [gx, gr]
    if mod:
        grads.append(gm)
    return tuple(grads)


def _b_rfft(node, g, x):
    axis = node.attrs.get("axis", -1)
    n = x.shape[axis]
    g = np.moveaxis(g, axis, -1).copy()
    # interior modes appear twice in the Hermitian reconstruction
    g[..., 1:(n + 1) // 2] *= 0.5
    gx = n * dft_inverse(g, n, axis=-1)
    return (np.ascontiguousarray(np.moveaxis(gx, -1, axis)),)


def _b_irfft(node, g, spec):
    axis = node.attrs.get("axis", -1)
    n = node.attrs["n"]
    gs = np.moveaxis(dft_forward(g, axis=axis), axis, -1) / n
    gs[..., 1:(n + 1) // 2] *= 2.0
    return (np.ascontiguousarray(np.moveaxis(gs, -1, axis)),)


def _b_truncate(node, g, x):
    axis = node.attrs.get("axis", -1)
    return (_resize(g, x.shape[axis], axis),)


def _b_activation(node, g, x):
    return (g * activation_grad(x, node.attrs["kind"]),)


def _b_broadcast(node, g, x):
    return (_unbroadcast(g, x.shape),)


def _b_reshape(node, g, x):
    return (g.reshape(x.shape),)


def _expand_reduced(g, x, axis):
    if axis is None:
        return np.broadcast_to(g, x.shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % x.ndim for a in axes)
    return np.broadcast_to(np.expand_dims(g, axes), x.shape)


def _b_sum(node, g, x):
    return (np.array(_expand_reduced(g, x, node.attrs.get("axis"))),)


def _b_mean(node, g, x):
    grad = np.array(_expand_reduced(g, x, node.attrs.get("axis")))
    return (grad * (np.size(g) / x.size),)


def _b_square(node, g, x):
    return (2.0 * x * g,)


def _b_mse(node, g, pred, target):
    gp = (2.0 / pred.size) * node.cache["diff"] * g
    return gp, -gp


_BACKWARD: dict[str, Callable] = {
    "add": _b_add,
    "sub": _b_sub,
    "mul": _b_mul,
    "scale": _b_scale,
    "matmul": _b_matmul,
    "linear": _b_linear,
    "einsum": _b_einsum,
    "spectral_mul": _b_spectral_mul,
    "rfft": _b_rfft,
    "irfft": _b_irfft,
    "truncate": _b_truncate,
    "pad": _b_truncate,
    "activation": _b_activation,
    "broadcast": _b_broadcast,
    "reshape": _b_reshape,
    "sum": _b_sum,
    "mean": _b_mean,
    "square": _b_square,
    "mse": _b_mse,
}

OP_KINDS = tuple(_FORWARD)


# ============================================================
# PUBLIC API
# ============================================================

def record(tape: Tape, op: str, *inputs: int, **attrs) -> int:
    """Evaluate `op` on the input slots and return the output slot."""
    if op not in _FORWARD:
        raise ContractError(f"unknown op-kind: {op}")
    for slot in inputs:
        if not 0 <= slot < len(tape.values):
            raise ContractError(f"{op}: slot {slot} is not on this tape")

    node = Node(op=op, inputs=tuple(inputs), output=-1, attrs=attrs)
    args = [tape.values[s] for s in inputs]
    try:
        out = _FORWARD[op](node, *args)
    except ValueError as e:
        raise ShapeError(f"{op}: {e}") from e

    requires = any(tape.requires[s] for s in inputs)
    slot = tape._push(_as_array(out), requires)
    if tape.recording and requires:
        node.output = slot
        tape.nodes.append(node)
    return slot


def backward(tape: Tape, loss_slot: int, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Adjoints of every parameter slot with respect to the scalar in `loss_slot`."""
    if not tape.recording:
        raise ContractError("backward on a tape created with record=False")
    loss = tape.values[loss_slot]
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")

    grads: list[np.ndarray | None] = [None] * len(tape.values)
    grads[loss_slot] = np.full(loss.shape, seed, dtype=loss.dtype)

    for node in reversed(tape.nodes):
        g = grads[node.output]
        if g is None:
            continue
        args = [tape.values[s] for s in node.inputs]
        local = _BACKWARD[node.op](node, g, *args)
        for slot, gi in zip(node.inputs, local):
            if gi is None or not tape.requires[slot]:
                continue
            gi = _match(np.asarray(gi), tape.values[slot])
            if grads[slot] is None:
                grads[slot] = np.array(gi, dtype=tape.values[slot].dtype)
            else:
                grads[slot] = grads[slot] + gi

    tape.grads = grads
    out = {}
    for name, slot in tape.params.items():
        g = grads[slot]
        out[name] = np.zeros_like(tape.values[slot]) if g is None else g
    return out


# ============================================================
# FINITE-DIFFERENCE CHECK
# ============================================================

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    max_error: float
    flagged: list[str]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.flagged


def _evaluate(f, params: dict[str, np.ndarray]) -> float:
    tape = Tape(record=False)
    slots = {name: tape.param(name, v) for name, v in params.items()}
    return float(np.real(tape.value(f(tape, slots))).reshape(()))


def grad_check(f, params: dict[str, np.ndarray], h: float = 1e-6, tol: float = 1e-5) -> GradCheckReport:
    """
    Compare analytic adjoints against central differences.

    `f(tape, slots)` builds a scalar loss from the parameter slots and
    returns its slot. Relative error per parameter group is
    ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12).
    """
    params = {name: _as_array(v).copy() for name, v in params.items()}
    tape = Tape()
    slots = {name: tape.param(name, v) for name, v in params.items()}
    analytic = backward(tape, f(tape, slots))

    errors: dict[str, float] = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        nflat = numeric.reshape(-1)
        parts = (1.0, 1j) if np.iscomplexobj(value) else (1.0,)
        for idx in range(flat.size):
            original = flat[idx]
            for unit in parts:
                flat[idx] = original + h * unit
                up = _evaluate(f, params)
                flat[idx] = original - h * unit
                down = _evaluate(f, params)
                flat[idx] = original
                nflat[idx] += unit * (up - down) / (2.0 * h)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        errors[name] = float(np.linalg.norm(a - numeric) / denom)

    flagged = [name for name, err in errors.items() if err > tol]
    return GradCheckReport(
        errors=errors,
        max_error=max(errors.values(), default=0.0),
        flagged=flagged,
        tol=tol,
    )
