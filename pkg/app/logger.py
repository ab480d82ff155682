import json
import datetime

from sqlalchemy import create_engine, text

from .config import DATABASE_URL

_engine = None


def get_engine():
    global _engine
    if _engine is None and DATABASE_URL:
        _engine = create_engine(DATABASE_URL, future=True)
    return _engine


def log_run(command: str, problem: str | None, config_hash: str | None, seed: int | None,
            metrics: dict, meta: dict | None = None):
    """Best-effort insert into run_logs; never raises."""
    if not DATABASE_URL:
        return
    ts = datetime.datetime.now(datetime.timezone.utc)
    try:
        from . import init_db
        engine = init_db()
        with engine.begin() as conn:
            conn.execute(text("""
                INSERT INTO run_logs (
                    command, problem, config_hash, seed, metrics, meta, created_at
                ) VALUES (:c, :p, :h, :s, :m, :x, :t)
            """), {
                "c": command,
                "p": problem,
                "h": config_hash,
                "s": seed,
                "m": json.dumps(metrics, default=float),
                "x": json.dumps(meta or {}, default=str),
                "t": ts,
            })
    except Exception as e:
        print("[RUNLOG] Error logging run:", e)
