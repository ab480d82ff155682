from pathlib import Path
import os

BASE = Path(__file__).resolve().parent
ARTIFACTS_DIR = os.getenv("CTFNO_ARTIFACTS_DIR", str(BASE / "artifacts"))
PRESETS_DIR = os.getenv("CTFNO_PRESETS_DIR", str(BASE / "presets"))
SEED = int(os.getenv("CTFNO_SEED", "0"))

# Run log (empty string disables it)
DATABASE_URL = os.getenv("CTFNO_DATABASE_URL", f"sqlite:///{Path(ARTIFACTS_DIR) / 'runs.db'}")

# Numerics
FFT_BACKEND = os.getenv("CTFNO_FFT_BACKEND", "native")
N_JOBS = int(os.getenv("CTFNO_N_JOBS", "1"))
LOG_EVERY = int(os.getenv("CTFNO_LOG_EVERY", "50"))
GENERATOR_VERSION = os.getenv("CTFNO_GENERATOR_VERSION", "1")

# Server settings
CHECKPOINT = os.getenv("CTFNO_CHECKPOINT")
