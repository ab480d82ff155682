import json

import numpy as np
import pytest

from app.checkpoint import load_checkpoint, load_optim_state, save_checkpoint, save_optim_state
from app.ctfno import CtfnoConfig, init_params, param_count
from app.errors import DatasetError
from app.training import OptimState


class TestCheckpoint:
    def test_round_trip_is_exact(self, small_params, tmp_path):
        save_checkpoint(tmp_path, small_params, {"problem": "heat", "seed": 3})
        loaded, meta = load_checkpoint(tmp_path)
        assert loaded.config == small_params.config
        assert loaded.names() == small_params.names()
        for n in small_params.names():
            assert loaded[n].dtype == small_params[n].dtype
            np.testing.assert_array_equal(loaded[n], small_params[n])
        assert meta["problem"] == "heat" and meta["format"] == "ctfno-checkpoint"

    def test_file_size_counts_complex_twice(self, small_params, tmp_path):
        save_checkpoint(tmp_path, small_params)
        assert (tmp_path / "params.bin").stat().st_size == 8 * param_count(small_params.config)

    def test_first_values_are_p(self, small_params, tmp_path):
        save_checkpoint(tmp_path, small_params)
        raw = np.fromfile(tmp_path / "params.bin", dtype="<f8")
        np.testing.assert_array_equal(raw[: small_params["P"].size], small_params["P"].reshape(-1))

    def test_size_mismatch(self, small_params, tmp_path):
        save_checkpoint(tmp_path, small_params)
        meta = json.loads((tmp_path / "meta").read_text())
        meta["model"]["channels"] = 4
        (tmp_path / "meta").write_text(json.dumps(meta))
        with pytest.raises(DatasetError):
            load_checkpoint(tmp_path)

    def test_missing_meta(self, tmp_path):
        with pytest.raises(DatasetError):
            load_checkpoint(tmp_path)

    def test_plain_stack(self, tmp_path):
        cfg = CtfnoConfig(layers=1, modes=2, channels=4, time_modulation=False)
        p = init_params(cfg, seed=1)
        save_checkpoint(tmp_path, p)
        loaded, _ = load_checkpoint(tmp_path)
        assert "phi_enc.W1" not in loaded.names()


class TestOptimState:
    def test_round_trip(self, small_params, tmp_path):
        state = OptimState.zeros(small_params)
        state.step = 7
        save_optim_state(tmp_path, state)
        loaded = load_optim_state(tmp_path)
        assert loaded.step == 7
        assert set(loaded.m) == set(small_params.names())

    def test_absent(self, tmp_path):
        assert load_optim_state(tmp_path) is None
