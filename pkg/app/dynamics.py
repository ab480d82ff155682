"""
Ground-truth solvers and trajectory generators.

PDE problems live on the unit periodic interval with grid x_j = j / n and
wavenumbers k = 0..n/2 (the Laplacian's eigenvalues are (2 pi k)^2).
Low-dimensional problems return [|times|, state] arrays.
"""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import BlowUpError, DomainError, InvalidLengthError, StiffSolverError
from .rng import RngStream
from .spectral import dft_forward, dft_inverse

TWO_PI = 2.0 * np.pi

SPIRAL_A = np.array([[-0.125, 1.0], [-1.0, -0.125]])


class GrfSpec(BaseModel):
    """Law N(0, sigma^2 (-Laplacian + tau^2)^(-alpha)) on the unit periodic interval."""

    model_config = ConfigDict(extra="forbid")

    sigma: float = Field(gt=0)
    tau: float = Field(gt=0)
    alpha: float = Field(gt=0.5)

    def variances(self, n: int) -> np.ndarray:
        k = np.arange(n // 2 + 1)
        return self.sigma ** 2 * ((TWO_PI * k) ** 2 + self.tau ** 2) ** (-self.alpha)


def wavenumbers(n: int) -> np.ndarray:
    return np.arange(n // 2 + 1, dtype=np.float64)


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size and np.any(times < 0):
        raise DomainError("sample times must be >= 0")
    return times


# ============================================================
# GAUSSIAN RANDOM FIELDS
# ============================================================

def sample_grf(spec: GrfSpec, n: int, rng: RngStream) -> np.ndarray:
    """One GRF sample on n points: Hermitian coefficients with E|u_k|^2 = lambda_k."""
    if n < 4 or n % 2:
        raise InvalidLengthError(f"GRF grid must be even and >= 4, got {n}")
    lam = spec.variances(n)
    z = rng.normal(2 * lam.size).reshape(2, lam.size)
    coef = np.sqrt(lam / 2.0) * (z[0] + 1j * z[1])
    # self-conjugate modes are real with the full variance
    coef[0] = np.sqrt(lam[0]) * z[0, 0]
    coef[-1] = np.sqrt(lam[-1]) * z[0, -1]
    return n * dft_inverse(coef, n)


# ============================================================
# HEAT
# ============================================================

def solve_heat(u0, nu: float, times) -> np.ndarray:
    """Exact solution u_hat(t, k) = u_hat0(k) exp(-nu (2 pi k)^2 t)."""
    u0 = np.asarray(u0, dtype=np.float64)
    times = _check_times(times)
    n = u0.shape[-1]
    u_hat = dft_forward(u0)
    decay = np.exp(-nu * np.outer(times, (TWO_PI * wavenumbers(n)) ** 2))
    return dft_inverse(u_hat[None, :] * decay, n)


# ============================================================
# BURGERS
# ============================================================

def _micro_steps(times: np.ndarray, dt: float) -> np.ndarray:
    """Micro-step counts for each gap from 0; dt must divide every gap."""
    gaps = np.diff(np.concatenate([[0.0], times]))
    steps = np.rint(gaps / dt)
    if np.any(steps < 0) or np.any(np.abs(steps * dt - gaps) > 1e-9 * np.maximum(1.0, np.abs(gaps))):
        raise DomainError(f"solver step {dt} does not divide the sample-time gaps")
    return steps.astype(np.int64)


def solve_burgers(u0, nu: float, dt_solver: float, times) -> np.ndarray:
    """
    u_t + (u^2 / 2)_x = nu u_xx by split steps of length dt_solver.

    Each micro-step applies the exact diffusion factor in Fourier space, then
    one forward-Euler step of the flux term computed pseudo-spectrally with
    2/3-rule dealiasing. The state stays in Fourier space between steps.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    times = _check_times(times)
    n = u0.shape[-1]
    k = wavenumbers(n)
    diffusion = np.exp(-nu * (TWO_PI * k) ** 2 * dt_solver)
    keep = k < n / 3.0
    flux_factor = -0.5j * TWO_PI * k * keep * dt_solver

    u_hat = dft_forward(u0)
    out = np.empty((times.size, n))
    step = 0
    for j, count in enumerate(_micro_steps(times, dt_solver)):
        for _ in range(count):
            step += 1
            u_hat = u_hat * diffusion
            u = dft_inverse(u_hat * keep, n)
            u_hat = u_hat + flux_factor * dft_forward(u * u)
            if not np.all(np.isfinite(u_hat)):
                raise BlowUpError(f"Burgers state became non-finite at micro-step {step}", step=step)
        out[j] = dft_inverse(u_hat, n)
    return out


# ============================================================
# REACTION
# ============================================================

def solve_reaction(f, rho: float, times) -> np.ndarray:
    """u = f e^(rho t) / (1 + f (e^(rho t) - 1)) pointwise."""
    f = np.asarray(f, dtype=np.float64)
    times = _check_times(times)
    g = np.exp(rho * times)[:, None]
    den = 1.0 + f[None, :] * (g - 1.0)
    if np.any(~np.isfinite(den)) or np.any(den <= 0):
        raise DomainError("reaction closed form has a non-positive denominator")
    return f[None, :] * g / den


def sample_reaction_initial(rng: RngStream, n: int = 100, k_max: int = 5,
                            low: float = 0.05, high: float = 0.95) -> np.ndarray:
    """1/2 (z1 sin(2 pi k1 x) + z2 sin(2 pi k2 x)) + z3 e^-x + 2, mapped affinely into (low, high)."""
    z = rng.normal(3)
    k1, k2 = rng.integers(1, k_max, size=2)
    x = np.arange(n) / n
    f = 0.5 * (z[0] * np.sin(TWO_PI * k1 * x) + z[1] * np.sin(TWO_PI * k2 * x)) + z[2] * np.exp(-x) + 2.0
    lo, hi = f.min(), f.max()
    if hi - lo <= 0:
        return np.full(n, 0.5 * (low + high))
    return low + (high - low) * (f - lo) / (hi - lo)


# ============================================================
# SPIRAL
# ============================================================

def _spiral_rhs(u: np.ndarray) -> np.ndarray:
    return SPIRAL_A @ np.tanh(u)


def gen_spiral(u0, times, max_step: float = 0.01) -> np.ndarray:
    """Classic RK4 with steps <= max_step between consecutive sample times."""
    u = np.asarray(u0, dtype=np.float64).copy()
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    out = np.empty((times.size, u.size))
    if times.size == 0:
        return out
    out[0] = u
    for j in range(1, times.size):
        gap = times[j] - times[j - 1]
        steps = max(1, int(np.ceil(gap / max_step - 1e-12)))
        h = gap / steps
        for _ in range(steps):
            k1 = _spiral_rhs(u)
            k2 = _spiral_rhs(u + 0.5 * h * k1)
            k3 = _spiral_rhs(u + 0.5 * h * k2)
            k4 = _spiral_rhs(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j] = u
    return out


def spiral_lyapunov(u: np.ndarray) -> np.ndarray:
    """V(u) = sum_i log cosh(u_i); dV/dt = -(1/8) |tanh u|^2 along trajectories."""
    u = np.asarray(u, dtype=np.float64)
    # log cosh(x) = |x| + log1p(exp(-2|x|)) - log 2
    a = np.abs(u)
    return np.sum(a + np.log1p(np.exp(-2 * a)) - np.log(2.0), axis=-1)


# ============================================================
# STIFF VAN DER POL
# ============================================================

def _vdp_rhs(y: np.ndarray, mu: float) -> np.ndarray:
    return np.array([y[1], mu * (1.0 - y[0] ** 2) * y[1] - y[0]])


def _vdp_jac(y: np.ndarray, mu: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-2.0 * mu * y[0] * y[1] - 1.0, mu * (1.0 - y[0] ** 2)]])


def _trapezoid_step(y: np.ndarray, h: float, mu: float, max_newton: int, newton_tol: float):
    """One implicit trapezoid step; None when Newton fails to converge."""
    fy = _vdp_rhs(y, mu)
    Y = y + h * fy
    eye = np.eye(2)
    for _ in range(max_newton):
        G = Y - y - 0.5 * h * (fy + _vdp_rhs(Y, mu))
        J = eye - 0.5 * h * _vdp_jac(Y, mu)
        try:
            delta = np.linalg.solve(J, G)
        except np.linalg.LinAlgError:
            return None
        Y = Y - delta
        if not np.all(np.isfinite(Y)):
            return None
        if np.max(np.abs(delta)) <= newton_tol * (1.0 + np.max(np.abs(Y))):
            return Y
    return None


def gen_stiff_vdp(x0: float, times, mu: float = 1000.0, tol: float = 1e-8,
                  min_step: float = 1e-12, max_newton: int = 50) -> np.ndarray:
    """
    x' = y, y' = mu (1 - x^2) y - x from (x0, 0) at times[0].

    Adaptive implicit trapezoid; the local error comes from step doubling,
    |y_half - y_full| / 3, scaled by tol (1 + |y|). Steps land exactly on
    every sample time. Newton failure halves the step.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    out = np.empty((times.size, 2))
    if times.size == 0:
        return out
    y = np.array([float(x0), 0.0])
    out[0] = y
    t = times[0]
    h = min(1e-4, max(times[-1] - t, min_step))
    newton_tol = 1e-3 * tol

    for j in range(1, times.size):
        target = times[j]
        while t < target:
            step = min(h, target - t)
            if step < min_step and target - t >= min_step:
                raise StiffSolverError(f"step size fell below {min_step} at t={t:.6g}")
            full = _trapezoid_step(y, step, mu, max_newton, newton_tol)
            half = _trapezoid_step(y, 0.5 * step, mu, max_newton, newton_tol)
            if half is not None:
                half = _trapezoid_step(half, 0.5 * step, mu, max_newton, newton_tol)
            if full is None or half is None:
                h = 0.5 * step
                continue
            scale = tol * (1.0 + np.abs(half))
            err = float(np.max(np.abs(half - full) / 3.0 / scale))
            if err <= 1.0:
                t = target if step == target - t else t + step
                y = half
                factor = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * err ** (-1.0 / 3.0)))
                h = step * factor
            else:
                h = step * max(0.2, 0.9 * err ** (-1.0 / 3.0))
        out[j] = y
    return out


# ============================================================
# SAWTOOTH / SQUARE
# ============================================================

def sawtooth(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return t / TWO_PI - np.floor(t / TWO_PI)


def square(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return 2.0 * (1.0 - np.floor(2.0 * (t / TWO_PI - np.floor(t / TWO_PI))))


def gen_sawtooth(t0: float, times) -> np.ndarray:
    """Sawtooth at t0 + times, shape [|times|, 1]."""
    return sawtooth(t0 + np.asarray(times, dtype=np.float64))[:, None]


def gen_square(t0: float, times) -> np.ndarray:
    """Square wave at t0 + times, shape [|times|, 1]; values are {0, 2}."""
    return square(t0 + np.asarray(times, dtype=np.float64))[:, None]
