import threading

from .checkpoint import load_checkpoint
from .config import CHECKPOINT
from .ctfno import param_count

_runtime = {}
_lock = threading.Lock()


def load_runtime(path: str | None = None):
    global _runtime

    if _runtime:
        return _runtime

    with _lock:
        if _runtime:
            return _runtime

        path = path or CHECKPOINT
        if not path:
            raise RuntimeError("CTFNO_CHECKPOINT is not set")

        print(f"[RUNTIME] Loading checkpoint from {path}...")
        params, meta = load_checkpoint(path)
        _runtime["params"] = params
        _runtime["meta"] = meta
        _runtime["param_count"] = param_count(params.config)
        _runtime["path"] = str(path)

        print(f"[RUNTIME] Model ready ({_runtime['param_count']} parameters)")
        return _runtime


def reset_runtime():
    with _lock:
        _runtime.clear()
