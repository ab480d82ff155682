import numpy as np
import pytest

from app.autograd import grad_check
from app.ctfno import (
    CtfnoConfig,
    CtfnoParams,
    build_forward,
    forward,
    freeze_time_encoders,
    gershgorin_normalize,
    init_params,
    layer_forward,
    param_count,
    param_shapes,
    row_norm_max,
    sinusoidal_embed,
    time_encode,
    without_time_modulation,
)
from app.errors import ConfigError, ShapeError
from app.spectral import resample


def _band_limited(batch, n, channels, modes, seed=0):
    rng = np.random.default_rng(seed)
    x = np.arange(n) / n
    out = np.zeros((batch, n, channels))
    for k in range(modes):
        a = rng.standard_normal((batch, 1, channels))
        b = rng.standard_normal((batch, 1, channels))
        out += a * np.cos(2 * np.pi * k * x)[None, :, None] + b * np.sin(2 * np.pi * k * x)[None, :, None]
    return out


class TestConfig:
    def test_heads_divide_channels(self):
        with pytest.raises(ValueError):
            CtfnoConfig(channels=10, heads=3)

    def test_extra_fields_rejected(self):
        with pytest.raises(ValueError):
            CtfnoConfig(width=3)

    def test_low_config_param_count(self):
        cfg = CtfnoConfig(layers=3, modes=4, channels=16, in_channels=2, out_channels=2,
                          time_hidden=32, time_sinusoid=16)
        assert param_count(cfg) == 13552

    @pytest.mark.parametrize("modulated", [True, False])
    def test_param_count_matches_shapes(self, modulated):
        cfg = CtfnoConfig(layers=2, modes=5, channels=6, heads=2, in_channels=3, out_channels=2,
                          time_hidden=7, time_sinusoid=4, time_modulation=modulated)
        total = sum(int(np.prod(s)) * (2 if t is np.complex128 else 1) for s, t in param_shapes(cfg).values())
        assert param_count(cfg) == total

    def test_canonical_order(self, small_config):
        names = list(param_shapes(small_config))
        assert names[:5] == ["P", "Q", "layers.0.W", "layers.0.b", "layers.0.R"]
        assert names[-1] == "psi_enc.b2"


class TestInit:
    def test_deterministic(self, small_config):
        a = init_params(small_config, seed=1)
        b = init_params(small_config, seed=1)
        for n in a.names():
            np.testing.assert_array_equal(a[n], b[n])

    def test_seed_changes_values(self, small_config):
        assert not np.array_equal(init_params(small_config, seed=1)["P"], init_params(small_config, seed=2)["P"])

    def test_layer_bias_zero(self, small_params):
        np.testing.assert_array_equal(small_params["layers.0.b"], 0.0)

    def test_spectral_weight_variance(self):
        cfg = CtfnoConfig(layers=1, modes=16, channels=32)
        R = init_params(cfg, seed=0)["layers.0.R"]
        assert R.real.var() == pytest.approx(1.0 / (32 * 16), rel=0.05)

    def test_zeros_scheme(self, small_config):
        p = init_params(small_config, scheme="zeros")
        assert all(not np.any(v) for v in p.arrays.values())

    def test_unknown_scheme(self, small_config):
        with pytest.raises(ConfigError):
            init_params(small_config, scheme="xavier")

    def test_check_detects_bad_shape(self, small_params):
        bad = small_params.replace(P=np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            bad.check()


class TestTimeEncoding:
    def test_sinusoids(self):
        e = sinusoidal_embed(np.array([0.0, 1.0]), 3)
        assert e.shape == (2, 6)
        np.testing.assert_array_equal(e[0], [0, 1, 0, 1, 0, 1])
        assert e[1, 0] == pytest.approx(np.sin(1.0))

    def test_encoder_shapes(self, small_params):
        phi, psi = time_encode(np.linspace(0, 1, 5), small_params)
        assert phi.shape == (5, 6) and psi.shape == (5, 6)

    def test_frozen_encoders_emit_ones(self, small_params):
        phi, psi = time_encode(np.array([0.0, 0.7, 3.0]), freeze_time_encoders(small_params))
        np.testing.assert_array_equal(phi, 1.0)
        np.testing.assert_array_equal(psi, 1.0)


class TestForward:
    def test_output_shape(self, small_params):
        a = np.random.default_rng(0).standard_normal((3, 16, 1))
        out = forward(small_params, a, np.array([0.1, 0.2, 0.5, 1.0]))
        assert out.shape == (3, 4, 16, 1)

    def test_empty_times(self, small_params):
        out = forward(small_params, np.zeros((2, 16, 1)), np.array([]))
        assert out.shape == (2, 0, 16, 1)

    def test_times_are_independent(self, small_params):
        a = np.random.default_rng(1).standard_normal((2, 16, 1))
        full = forward(small_params, a, np.array([0.1, 0.4, 0.9]))
        single = forward(small_params, a, np.array([0.4]))
        np.testing.assert_allclose(full[:, 1:2], single, atol=1e-12)

    def test_channel_mismatch(self, small_params):
        with pytest.raises(ShapeError):
            forward(small_params, np.zeros((1, 16, 2)), [0.1])

    def test_grid_too_small_for_modes(self, small_params):
        with pytest.raises(ConfigError):
            forward(small_params, np.zeros((1, 6, 1)), [0.1])

    def test_zero_model_gives_zero(self, small_config):
        p = init_params(small_config, scheme="zeros")
        out = forward(p, np.ones((1, 16, 1)), [0.3])
        np.testing.assert_array_equal(out, 0.0)

    def test_padding_keeps_grid(self):
        cfg = CtfnoConfig(layers=1, modes=4, channels=4, time_hidden=4, time_sinusoid=2, padding=5)
        out = forward(init_params(cfg), np.ones((1, 12, 1)), [0.2])
        assert out.shape == (1, 1, 12, 1)

    def test_layer_forward_matches_network(self, small_config):
        cfg = small_config.model_copy(update={"layers": 1})
        p = init_params(cfg, seed=5)
        p = p.replace(P=np.ones((cfg.channels, 1)), Q=np.eye(1, cfg.channels))
        a = np.random.default_rng(2).standard_normal((2, 16, 1))
        v = a @ p["P"].T
        layer = layer_forward(p, v, 0.3, 0)
        net = forward(p, a, [0.3])[:, 0]
        np.testing.assert_allclose(net[..., 0], layer[..., 0], atol=1e-12)


class TestReduction:
    def test_frozen_encoders_reduce_to_plain_stack(self, small_params):
        frozen = freeze_time_encoders(small_params)
        plain = without_time_modulation(frozen)
        a = np.random.default_rng(3).standard_normal((2, 16, 1))
        times = np.array([0.0, 0.5, 2.0])
        np.testing.assert_allclose(forward(frozen, a, times), forward(plain, a, times), atol=1e-12)

    def test_plain_stack_is_time_invariant(self, small_params):
        plain = without_time_modulation(small_params)
        a = np.random.default_rng(4).standard_normal((1, 16, 1))
        out = forward(plain, a, np.array([0.1, 7.0]))
        np.testing.assert_array_equal(out[:, 0], out[:, 1])


class TestDiscretizationInvariance:
    def test_linear_model_on_band_limited_input(self):
        cfg = CtfnoConfig(layers=2, modes=4, channels=4, time_hidden=4, time_sinusoid=2, activation="identity")
        p = init_params(cfg, seed=8)
        a = _band_limited(2, 16, 1, 4)
        coarse = forward(p, a, [0.3, 0.9])
        fine = forward(p, resample(a, 64, axis=1), [0.3, 0.9])
        np.testing.assert_allclose(resample(coarse, 64, axis=2), fine, atol=1e-10)

    def test_gelu_model_close_across_grids(self, small_params):
        a = _band_limited(1, 32, 1, 3, seed=2)
        coarse = forward(small_params, a, [0.5])
        fine = forward(small_params, resample(a, 128, axis=1), [0.5])
        err = np.abs(fine[:, :, ::4] - coarse).max()
        assert err < 0.05 * max(np.abs(coarse).max(), 1e-3)


class TestGradients:
    def test_full_model_grad_check(self):
        cfg = CtfnoConfig(layers=2, modes=8, channels=8, time_hidden=4, time_sinusoid=2)
        params = init_params(cfg, seed=11)
        rng = np.random.default_rng(5)
        a = rng.standard_normal((2, 32, 1))
        times = np.array([0.2, 0.7])
        target = rng.standard_normal((2, 2, 32, 1))

        def loss(tape, slots):
            from app.autograd import record
            out = build_forward(tape, slots, cfg, a, times)
            return record(tape, "mse", out, tape.constant(target))

        report = grad_check(loss, params.arrays, h=1e-6, tol=1e-5)
        assert report.ok, report.errors

    def test_plain_stack_grad_check(self):
        cfg = CtfnoConfig(layers=1, modes=3, channels=4, time_modulation=False, padding=2)
        params = init_params(cfg, seed=2)
        rng = np.random.default_rng(6)
        a = rng.standard_normal((1, 8, 1))
        target = rng.standard_normal((1, 1, 8, 1))

        def loss(tape, slots):
            from app.autograd import record
            return record(tape, "mse", build_forward(tape, slots, cfg, a, [0.0]), tape.constant(target))

        assert grad_check(loss, params.arrays).ok


class TestGershgorin:
    def test_rows_within_bound(self, small_params):
        scaled = small_params.replace(**{"layers.0.W": small_params["layers.0.W"] * 50})
        out = gershgorin_normalize(scaled, 1.2)
        assert row_norm_max(out) <= 1.2

    def test_idempotent(self, small_params):
        scaled = small_params.replace(**{"layers.1.R": small_params["layers.1.R"] * 30})
        once = gershgorin_normalize(scaled, 0.7)
        twice = gershgorin_normalize(once, 0.7)
        for n in once.names():
            np.testing.assert_array_equal(once[n], twice[n])

    def test_feasible_rows_untouched(self, small_params):
        out = gershgorin_normalize(small_params, 1e6)
        for n in small_params.names():
            np.testing.assert_array_equal(out[n], small_params[n])

    def test_only_w_and_r_change(self, small_params):
        out = gershgorin_normalize(small_params, 1e-3)
        np.testing.assert_array_equal(out["P"], small_params["P"])
        np.testing.assert_array_equal(out["layers.0.A"], small_params["layers.0.A"])

    def test_bound_must_be_positive(self, small_params):
        with pytest.raises(ConfigError):
            gershgorin_normalize(small_params, 0.0)


@pytest.mark.slow
def test_full_scale_forward_on_fine_grid():
    cfg = CtfnoConfig(layers=2, modes=64, channels=64, time_hidden=512, time_sinusoid=128)
    p = init_params(cfg)
    out = forward(p, _band_limited(1, 1024, 1, 8), np.linspace(0.05, 2.5, 50))
    assert out.shape == (1, 50, 1024, 1)
    assert np.all(np.isfinite(out))
    assert isinstance(p, CtfnoParams)
