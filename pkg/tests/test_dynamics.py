import numpy as np
import pytest
from scipy.integrate import solve_ivp

from app.dynamics import (
    SPIRAL_A,
    TWO_PI,
    GrfSpec,
    gen_sawtooth,
    gen_spiral,
    gen_square,
    gen_stiff_vdp,
    sample_grf,
    sample_reaction_initial,
    sawtooth,
    solve_burgers,
    solve_heat,
    solve_reaction,
    spiral_lyapunov,
    square,
)
from app.errors import BlowUpError, DomainError, InvalidLengthError, StiffSolverError
from app.rng import RngStream


class TestGrf:
    def test_deterministic_per_stream(self):
        spec = GrfSpec(sigma=7.0, tau=7.0, alpha=2.5)
        a = sample_grf(spec, 64, RngStream(1, 5))
        b = sample_grf(spec, 64, RngStream(1, 5))
        np.testing.assert_array_equal(a, b)

    def test_odd_grid_rejected(self):
        with pytest.raises(InvalidLengthError):
            sample_grf(GrfSpec(sigma=1, tau=1, alpha=1), 63, RngStream(0))

    def test_alpha_must_exceed_half(self):
        with pytest.raises(ValueError):
            GrfSpec(sigma=1.0, tau=1.0, alpha=0.5)

    def test_pointwise_variance(self):
        spec = GrfSpec(sigma=20.0, tau=3.5, alpha=2.5)
        n = 32
        samples = np.stack([sample_grf(spec, n, RngStream(3, i)) for i in range(2000)])
        lam = spec.variances(n)
        # sum of mode variances with the Hermitian doubling of interior modes
        expected = (lam[0] + 2 * lam[1:-1].sum() + lam[-1])
        assert samples.var(axis=0).mean() == pytest.approx(expected, rel=0.1)

    def test_mode_variances(self):
        spec = GrfSpec(sigma=20.0, tau=3.5, alpha=2.5)
        n = 32
        samples = np.stack([sample_grf(spec, n, RngStream(4, i)) for i in range(2000)])
        coef = np.fft.rfft(samples, axis=1) / n
        ratio = np.mean(np.abs(coef) ** 2, axis=0)[:9] / spec.variances(n)[:9]
        np.testing.assert_allclose(ratio, 1.0, atol=0.15)

    def test_spectrum_decays(self):
        spec = GrfSpec(sigma=7.0, tau=7.0, alpha=2.5)
        u = np.stack([sample_grf(spec, 128, RngStream(0, i)) for i in range(200)])
        power = np.mean(np.abs(np.fft.rfft(u, axis=1)) ** 2, axis=0)
        assert power[40] < 1e-3 * power[1]


class TestHeat:
    def test_single_mode_decay(self):
        n, nu = 64, 0.01
        x = np.arange(n) / n
        u0 = np.sin(TWO_PI * 3 * x)
        times = np.array([0.0, 0.1, 0.5])
        out = solve_heat(u0, nu, times)
        expected = np.exp(-nu * (TWO_PI * 3) ** 2 * times)[:, None] * u0
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_mean_conserved(self, rng):
        u0 = rng.standard_normal(100)
        out = solve_heat(u0, 0.001, [0.05, 1.0, 2.5])
        np.testing.assert_allclose(out.mean(axis=1), u0.mean(), atol=1e-12)

    def test_l2_norm_decays_on_grf(self):
        u0 = sample_grf(GrfSpec(sigma=7.0, tau=7.0, alpha=2.5), 128, RngStream(2, 0))
        out = solve_heat(u0, 0.01, np.linspace(0.0, 2.5, 26))
        norms = np.sqrt(np.mean(out ** 2, axis=1))
        assert np.all(np.diff(norms) <= 1e-15)
        assert norms[-1] < norms[0]

    def test_negative_time(self):
        with pytest.raises(DomainError):
            solve_heat(np.zeros(8), 0.1, [-0.1])


class TestBurgers:
    def _field(self, n, amplitude):
        x = np.arange(n) / n
        return amplitude * (np.sin(TWO_PI * x) + 0.5 * np.cos(TWO_PI * 2 * x))

    @pytest.mark.parametrize("amplitude,tol", [(1e-5, 1e-5), (1e-3, 1e-3)])
    def test_small_amplitude_matches_heat(self, amplitude, tol):
        n, nu = 64, 0.01
        u0 = self._field(n, amplitude)
        times = [0.01, 0.02]
        burgers = solve_burgers(u0, nu, 1e-3, times)
        heat = solve_heat(u0, nu, times)
        assert np.max(np.abs(burgers - heat)) <= tol * amplitude

    def test_energy_does_not_grow(self):
        n, nu, dt = 128, 0.01, 1e-4
        u0 = self._field(n, 1.0)
        times = dt * np.arange(1, 201)
        out = solve_burgers(u0, nu, dt, times)
        energy = np.sum(out ** 2, axis=1)
        assert energy[0] <= np.sum(u0 ** 2) + 1e-9
        assert np.all(np.diff(energy) <= 1e-9)

    def test_mean_conserved(self):
        u0 = self._field(64, 1.0) + 0.3
        out = solve_burgers(u0, 0.01, 1e-3, [0.02, 0.05])
        np.testing.assert_allclose(out.mean(axis=1), 0.3, atol=1e-12)

    def test_first_order_in_solver_step(self):
        u0 = self._field(64, 1.0)
        nu, dt, times = 0.01, 1e-3, [0.1]
        reference = solve_burgers(u0, nu, dt / 16, times)
        coarse = np.max(np.abs(solve_burgers(u0, nu, dt, times) - reference))
        fine = np.max(np.abs(solve_burgers(u0, nu, dt / 2, times) - reference))
        assert 1.8 < coarse / fine < 2.5

    def test_step_must_divide_gaps(self):
        with pytest.raises(DomainError):
            solve_burgers(np.zeros(16), 0.01, 0.003, [0.01])

    def test_blow_up_reports_step(self):
        u0 = self._field(32, 1e200)
        with pytest.raises(BlowUpError) as exc:
            solve_burgers(u0, 0.0, 1e-3, [0.01])
        assert exc.value.step >= 1


class TestReaction:
    def test_initial_time_returns_f(self, rng):
        f = rng.uniform(0.05, 0.95, 100)
        np.testing.assert_array_equal(solve_reaction(f, 6.0, [0.0])[0], f)

    def test_fixed_points(self):
        out = solve_reaction(np.array([0.0, 1.0]), 6.0, [0.3, 1.0])
        np.testing.assert_array_equal(out, [[0.0, 1.0], [0.0, 1.0]])

    def test_satisfies_logistic_ode(self, rng):
        f = rng.uniform(0.05, 0.95, 10)
        rho, t, h = 6.0, 0.4, 1e-6
        u = solve_reaction(f, rho, [t - h, t, t + h])
        du = (u[2] - u[0]) / (2 * h)
        np.testing.assert_allclose(du, rho * u[1] * (1 - u[1]), rtol=1e-6)

    def test_monotone_in_time(self, rng):
        f = rng.uniform(0.05, 0.95, 50)
        out = solve_reaction(f, 6.0, np.linspace(0.0, 1.0, 51))
        assert np.all(np.diff(out, axis=0) > 0)

    def test_initial_sample_range(self):
        f = sample_reaction_initial(RngStream(0, 2))
        assert f.shape == (100,)
        assert f.min() == pytest.approx(0.05) and f.max() == pytest.approx(0.95)

    def test_non_positive_denominator(self):
        with pytest.raises(DomainError):
            solve_reaction(np.array([-1.0]), 6.0, [1.0])


class TestSpiral:
    def test_matches_reference_integrator(self):
        u0 = np.array([1.5, -0.7])
        times = np.linspace(0, 10, 100)
        ours = gen_spiral(u0, times)
        ref = solve_ivp(lambda t, u: SPIRAL_A @ np.tanh(u), (0, 10), u0, t_eval=times,
                        rtol=1e-11, atol=1e-12).y.T
        np.testing.assert_allclose(ours, ref, atol=1e-7)

    def test_lyapunov_decreases(self):
        out = gen_spiral(np.array([2.0, 2.0]), np.linspace(0, 10, 100))
        v = spiral_lyapunov(out)
        assert np.all(np.diff(v) < 0)

    def test_origin_is_fixed(self):
        out = gen_spiral(np.zeros(2), np.linspace(0, 10, 100))
        np.testing.assert_array_equal(out, 0.0)

    def test_first_row_is_initial(self):
        u0 = np.array([0.3, -0.4])
        np.testing.assert_array_equal(gen_spiral(u0, [0.0, 1.0])[0], u0)


class TestStiffVdp:
    def test_matches_radau_reference(self):
        mu, x0 = 10.0, 1.5
        times = np.linspace(0, 2, 21)
        ours = gen_stiff_vdp(x0, times, mu=mu, tol=1e-9)
        ref = solve_ivp(
            lambda t, y: [y[1], mu * (1 - y[0] ** 2) * y[1] - y[0]],
            (0, 2), [x0, 0.0], method="Radau", t_eval=times, rtol=1e-11, atol=1e-12,
        ).y.T
        np.testing.assert_allclose(ours, ref, atol=1e-5)

    def test_stiff_regime_stays_bounded(self):
        out = gen_stiff_vdp(2.0, np.linspace(0, 20, 100))
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(out[:, 0])) <= 2.0 + 1e-6

    def test_tolerance_refinement(self):
        times = [0.0, 20.0]
        loose = gen_stiff_vdp(2.0, times, tol=1e-8)
        tight = gen_stiff_vdp(2.0, times, tol=1e-10)
        assert np.max(np.abs(loose[-1] - tight[-1])) < 1e-6

    def test_zero_damping_is_harmonic(self):
        times = np.linspace(0.0, 1.0, 11)
        out = gen_stiff_vdp(1.5, times, mu=0.0, tol=1e-10)
        np.testing.assert_allclose(out[:, 0], 1.5 * np.cos(times), atol=1e-6)
        np.testing.assert_allclose(out[:, 1], -1.5 * np.sin(times), atol=1e-6)

    def test_min_step_failure(self):
        with pytest.raises(StiffSolverError):
            gen_stiff_vdp(1.5, [0.0, 1.0], mu=1000.0, tol=1e-30, min_step=1e-3)


class TestWaves:
    def test_sawtooth_period(self):
        t = np.linspace(0.1, 6.0, 50)
        np.testing.assert_allclose(sawtooth(t + TWO_PI), sawtooth(t), atol=1e-12)
        assert np.all((sawtooth(t) >= 0) & (sawtooth(t) < 1))

    def test_square_values(self):
        t = np.array([0.1, 1.0, np.pi + 0.1, 5.0])
        np.testing.assert_array_equal(square(t), [2.0, 2.0, 0.0, 0.0])

    def test_generators_shift_by_t0(self):
        times = np.linspace(0, 20, 100)
        np.testing.assert_allclose(gen_sawtooth(1.0, times)[:, 0], sawtooth(1.0 + times))
        assert gen_square(0.5, times).shape == (100, 1)
