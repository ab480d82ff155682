import os
import sys
import tempfile
from pathlib import Path

# settings are read at import time, so they are pinned before any app import
os.environ["CTFNO_DATABASE_URL"] = ""
os.environ.setdefault("CTFNO_ARTIFACTS_DIR", tempfile.mkdtemp(prefix="ctfno-artifacts-"))
os.environ.setdefault("CTFNO_LOG_EVERY", "0")

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np
import pytest

from app.ctfno import CtfnoConfig, init_params
from app.datasets import DataSpec, build_splits


@pytest.fixture
def small_config():
    return CtfnoConfig(layers=2, modes=4, channels=8, time_hidden=6, time_sinusoid=3)


@pytest.fixture
def small_params(small_config):
    return init_params(small_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def heat_splits():
    spec = DataSpec.for_problem("heat", n=32, horizon=0.25, n_train=6, n_test=3)
    return build_splits(spec, master_seed=7)
