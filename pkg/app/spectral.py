"""
Spectral core: dense real/complex arrays, the DFT along one spatial axis
and pointwise activations with exact derivatives.

Tensor   -> float64 ndarray, row-major, batch/space/channel axes.
Spectrum -> complex128 ndarray holding modes 0..n//2 of a real signal.

Convention: unnormalized forward transform, the inverse divides by n.
Power-of-two lengths use an iterative radix-2 FFT, every other length goes
through Bluestein's chirp-z convolution (so grids of 100 and 1024 both work).
"""

from functools import lru_cache
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy import special

from .config import FFT_BACKEND
from .errors import InvalidLengthError, ShapeError

Tensor = npt.NDArray[np.float64]
Spectrum = npt.NDArray[np.complex128]
ActivationKind = Literal["gelu", "silu", "identity"]

# upper bounds of |sigma'| used by the stability bounds
LIPSCHITZ = {"gelu": 1.1290, "silu": 1.1, "identity": 1.0}

_SQRT_2PI = np.sqrt(2.0 * np.pi)


# ============================================================
# FFT KERNELS (last axis)
# ============================================================

@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.flags.writeable = False
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int) -> np.ndarray:
    tw = np.exp(-2j * np.pi * np.arange(size // 2) / size)
    tw.flags.writeable = False
    return tw


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        blocks = y.reshape(lead + (n // size, 2, half))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _twiddles(size)
        out = np.empty_like(blocks)
        out[..., 0, :] = even + odd
        out[..., 1, :] = even - odd
        y = out.reshape(lead + (n,))
        size *= 2
    return y


def _ifft_radix2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_radix2(np.conj(x))) / x.shape[-1]


@lru_cache(maxsize=None)
def _chirp(n: int):
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the phase argument small for large n
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1 << (2 * n - 1).bit_length()
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    kernel = _fft_radix2(b)
    w.flags.writeable = False
    kernel.flags.writeable = False
    return w, m, kernel


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    w, m, kernel = _chirp(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * w
    c = _ifft_radix2(_fft_radix2(a) * kernel)
    return c[..., :n] * w


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fft(x: np.ndarray) -> np.ndarray:
    """Full complex DFT along the last axis (unnormalized)."""
    n = x.shape[-1]
    if _is_power_of_two(n):
        return _fft_radix2(x)
    return _fft_bluestein(x)


def ifft(x: np.ndarray) -> np.ndarray:
    return np.conj(fft(np.conj(x))) / x.shape[-1]


# ============================================================
# REAL <-> HALF SPECTRUM
# ============================================================

def _check_length(n: int):
    if n < 2:
        raise InvalidLengthError(f"DFT length must be >= 2, got {n}")


def dft_forward(signal, axis: int = -1, backend: str | None = None) -> Spectrum:
    """Modes 0..n//2 of the unnormalized DFT of a real signal along `axis`."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 0:
        raise InvalidLengthError("DFT of a scalar")
    n = x.shape[axis]
    _check_length(n)

    if (backend or FFT_BACKEND) == "numpy":
        return np.fft.rfft(x, axis=axis)

    moved = np.moveaxis(x, axis, -1)
    spec = fft(moved)[..., : n // 2 + 1]
    # exact zeros on the self-conjugate modes
    spec[..., 0] = spec[..., 0].real
    if n % 2 == 0:
        spec[..., n // 2] = spec[..., n // 2].real
    return np.ascontiguousarray(np.moveaxis(spec, -1, axis))


def dft_inverse(spec, n: int, axis: int = -1, backend: str | None = None) -> Tensor:
    """Real signal of length n from its half spectrum (divides by n)."""
    X = np.asarray(spec, dtype=np.complex128)
    _check_length(n)
    if X.ndim == 0 or X.shape[axis] != n // 2 + 1:
        got = None if X.ndim == 0 else X.shape[axis]
        raise ShapeError(f"half spectrum for n={n} needs {n // 2 + 1} modes, got {got}")

    if (backend or FFT_BACKEND) == "numpy":
        return np.fft.irfft(X, n=n, axis=axis)

    moved = np.moveaxis(X, axis, -1)
    m = moved.shape[-1]
    full = np.empty(moved.shape[:-1] + (n,), dtype=np.complex128)
    full[..., :m] = moved
    full[..., 0] = moved[..., 0].real
    if n % 2 == 0:
        full[..., n // 2] = moved[..., n // 2].real
    neg = (n - 1) // 2
    if neg > 0:
        full[..., n - neg:] = np.conj(moved[..., 1: neg + 1][..., ::-1])
    x = ifft(full).real
    return np.ascontiguousarray(np.moveaxis(x, -1, axis))


def pad_or_truncate_spectrum(spec, n_old: int, n_new: int, axis: int = -1) -> Spectrum:
    """
    Move a half spectrum from grid n_old to grid n_new.

    The result evaluates the trigonometric interpolant, restricted to the modes
    the new grid can hold, on the new grid; coefficients are rescaled by
    n_new / n_old so band-limited signals resample exactly.
    """
    if n_new < 2:
        raise InvalidLengthError(f"target grid must be >= 2, got {n_new}")
    X = np.moveaxis(np.asarray(spec, dtype=np.complex128), axis, -1)
    if X.shape[-1] != n_old // 2 + 1:
        raise ShapeError(f"half spectrum for n={n_old} needs {n_old // 2 + 1} modes, got {X.shape[-1]}")
    if n_new == n_old:
        return np.ascontiguousarray(np.moveaxis(X.copy(), -1, axis))

    out = np.zeros(X.shape[:-1] + (n_new // 2 + 1,), dtype=np.complex128)
    keep = min(X.shape[-1], out.shape[-1])
    out[..., :keep] = X[..., :keep]
    if n_new > n_old and n_old % 2 == 0:
        # old Nyquist becomes an interior mode shared with its mirror
        out[..., n_old // 2] *= 0.5
    elif n_new < n_old and n_new % 2 == 0:
        # interior cosine sampled on the coarse grid lands on the new Nyquist
        out[..., n_new // 2] = 2.0 * X[..., n_new // 2].real
    out *= n_new / n_old
    return np.ascontiguousarray(np.moveaxis(out, -1, axis))


def resample(signal, n_new: int, axis: int = -1) -> Tensor:
    """Spectral resampling of a periodic signal onto n_new uniform points."""
    x = np.asarray(signal, dtype=np.float64)
    n_old = x.shape[axis]
    spec = dft_forward(x, axis=axis)
    return dft_inverse(pad_or_truncate_spectrum(spec, n_old, n_new, axis=axis), n_new, axis=axis)


# ============================================================
# ACTIVATIONS
# ============================================================

def activation(x, kind: ActivationKind) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if kind == "gelu":
        return x * special.ndtr(x)
    if kind == "silu":
        return x * special.expit(x)
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation: {kind}")


def activation_grad(x, kind: ActivationKind) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if kind == "gelu":
        return special.ndtr(x) + x * np.exp(-0.5 * x * x) / _SQRT_2PI
    if kind == "silu":
        s = special.expit(x)
        return s * (1.0 + x * (1.0 - s))
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation: {kind}")
