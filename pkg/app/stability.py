"""
Stability bounds and perturbation probes.

Layer l at time t is sigma(L_l(t) v + b_l) with
    L_l(t) v = W_l diag(s_l(t)) v + iDFT(K_l(t, xi) DFT(v)),
    K_l(t, xi) = blockrows_h( phi_l^(h)(t, xi) R_l^(h)(xi) ).
By Parseval ||L v||^2 <= 2 (||W diag(s)||^2 + max_xi ||K(xi)||^2) ||v||^2, so the
layer moves perturbations by at most sqrt(2) Lip(sigma) M_l(t) with
M_l(t)^2 = ||W diag(s)||_2^2 + max_xi ||K(t, xi)||_2^2.
"""

from dataclasses import dataclass

import numpy as np

from .ctfno import CtfnoParams, forward, kernel_matrices, layer_forward, time_encode
from .errors import ConfigError
from .rng import RngStream
from .spectral import LIPSCHITZ

_SQRT2 = np.sqrt(2.0)


def _modulations(params: CtfnoParams, times: np.ndarray, l: int):
    """(s_l(t) [T, d_v], phi_l(t, xi) [T, modes, heads]) or (None, None) for the plain stack."""
    cfg = params.config
    if not cfg.time_modulation:
        return None, None
    phi, psi = time_encode(times, params)
    s = psi @ params[f"layers.{l}.B"].T
    mod = np.einsum("tc,ckh->tkh", phi, params[f"layers.{l}.A"])
    return s, mod


def layer_radius(params: CtfnoParams, l: int, times) -> np.ndarray:
    """M_l(t) at each time, from spectral norms of the time-modulated operators."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    W = params[f"layers.{l}.W"]
    R = params[f"layers.{l}.R"]
    s, mod = _modulations(params, times, l)
    if s is None:
        local = np.full(times.shape, np.linalg.norm(W, ord=2))
        kern = np.full(times.shape, np.linalg.norm(kernel_matrices(R), ord=2, axis=(-2, -1)).max())
    else:
        local = np.linalg.norm(W[None] * s[:, None, :], ord=2, axis=(-2, -1))
        K = R[None] * mod[..., None, None]          # [T, modes, heads, d_k, d_v]
        K = K.reshape(K.shape[:2] + (-1, K.shape[-1]))
        kern = np.linalg.norm(K, ord=2, axis=(-2, -1)).max(axis=1)
    return np.sqrt(local ** 2 + kern ** 2)


def layer_bound(params: CtfnoParams, l: int, times) -> np.ndarray:
    """Per-time amplification bound sqrt(2) Lip(sigma) M_l(t) of layer l."""
    return _SQRT2 * LIPSCHITZ[params.config.activation] * layer_radius(params, l, times)


def network_bound(params: CtfnoParams, times) -> float:
    """max_t ||Q||_2 prod_l sqrt(2) Lip(sigma) M_l(t) ||P||_2."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.size == 0:
        return 0.0
    total = np.full(times.shape, np.linalg.norm(params["Q"], ord=2) * np.linalg.norm(params["P"], ord=2))
    for l in range(params.config.layers):
        total = total * layer_bound(params, l, times)
    return float(total.max())


def row_radii(params: CtfnoParams) -> list[dict]:
    """Largest row L1 norm of W_l and of R_l(xi) per layer (the Gershgorin radii)."""
    out = []
    for l in range(params.config.layers):
        out.append({
            "layer": l,
            "W": float(np.abs(params[f"layers.{l}.W"]).sum(axis=-1).max()),
            "R": float(np.abs(kernel_matrices(params[f"layers.{l}.R"])).sum(axis=-1).max()),
        })
    return out


def power_iteration(mat: np.ndarray, iters: int = 500, seed: int = 0) -> float:
    """Spectral norm of `mat` from power iteration on mat^H mat."""
    rng = RngStream(seed, 0, purpose="probe")
    v = rng.normal(mat.shape[-1]).astype(mat.dtype)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = mat.conj().T @ (mat @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        sigma = np.sqrt(norm)
    return float(sigma)


# ============================================================
# PERTURBATION PROBE
# ============================================================


@dataclass
class ProbeResult:
    ratios: np.ndarray
    bound: float
    noisy_rmse: float | None
    epsilon: float

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if self.ratios.size else 0.0

    @property
    def mean_ratio(self) -> float:
        return float(self.ratios.mean()) if self.ratios.size else 0.0

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "trials": int(self.ratios.size),
            "max_ratio": self.max_ratio,
            "mean_ratio": self.mean_ratio,
            "bound": self.bound,
            "noisy_rmse": self.noisy_rmse,
        }


def perturbation(shape: tuple[int, ...], epsilon: float, rng: RngStream) -> np.ndarray:
    """Gaussian direction scaled to Euclidean norm epsilon."""
    d = rng.normal(shape)
    return epsilon * d / np.linalg.norm(d)


def probe(params: CtfnoParams, inputs: np.ndarray, times, epsilon: float, trials: int,
          seed: int = 0, targets: np.ndarray | None = None) -> ProbeResult:
    """
    Empirical amplification ||N(a + d) - N(a)|| / ||d|| over `trials` draws.

    Trial i perturbs input i mod count; the ratio is the maximum over sample
    times. With `targets` the pooled RMSE of the perturbed predictions is
    reported as well.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    inputs = np.asarray(inputs, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    ratios = np.zeros(trials)
    sq_err, count = 0.0, 0
    clean_cache: dict[int, np.ndarray] = {}
    for i in range(trials):
        idx = i % inputs.shape[0]
        a = inputs[idx:idx + 1]
        if idx not in clean_cache:
            clean_cache[idx] = forward(params, a, times)[0]
        delta = perturbation(a.shape, epsilon, RngStream(seed, i, purpose="probe"))
        noisy = forward(params, a + delta, times)[0]
        diff = (noisy - clean_cache[idx]).reshape(len(times), -1)
        ratios[i] = np.linalg.norm(diff, axis=1).max() / epsilon if len(times) else 0.0
        if targets is not None:
            err = noisy - targets[idx]
            sq_err += float(np.sum(err * err))
            count += err.size
    noisy_rmse = float(np.sqrt(sq_err / count)) if count else None
    return ProbeResult(ratios=ratios, bound=network_bound(params, times), noisy_rmse=noisy_rmse, epsilon=epsilon)


def layer_probe(params: CtfnoParams, l: int, t: float, v: np.ndarray, epsilon: float,
                rng: RngStream) -> float:
    """Squared amplification ||L(v + d) - L(v)||^2 / ||d||^2 of one layer at one time."""
    d = perturbation(v.shape, epsilon, rng)
    diff = layer_forward(params, v + d, t, l) - layer_forward(params, v, t, l)
    return float(np.sum(diff * diff) / epsilon ** 2)
