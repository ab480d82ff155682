from fastapi import FastAPI, Response
from pydantic import BaseModel, Field
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import numpy as np
import traceback
import os
import threading

from app.errors import CtfnoError
from app.spectral import resample

# ============================
# GLOBAL READINESS STATE
# ============================
_is_ready = False
_warmup_lock = threading.Lock()

# ============================
# LIFESPAN EVENT HANDLER
# ============================
@asynccontextmanager
async def lifespan(app: FastAPI):
    """Handle startup and shutdown events"""
    print("[STARTUP] FastAPI application starting...")
    print("[STARTUP] Launching background checkpoint warmup...")

    thread = threading.Thread(
        target=background_warmup,
        daemon=True,
        name="CheckpointWarmupThread"
    )
    thread.start()

    yield

    print("[SHUTDOWN] Application shutting down...")

# ============================
# FASTAPI APP WITH LIFESPAN
# ============================
app = FastAPI(
    title="CTFNO Operator Service",
    lifespan=lifespan
)

# ============================
# CORS
# ============================
allowed_origins = os.environ.get("CTFNO_ALLOWED_ORIGINS", "*")
origins = ["*"] if allowed_origins == "*" else [
    o.strip() for o in allowed_origins.split(",") if o.strip()
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ============================
# REQUEST MODELS
# ============================
class PredictReq(BaseModel):
    # [batch, grid, in_channels]
    initial: list[list[list[float]]]
    times: list[float] = Field(min_length=1)
    resolution: int | None = Field(None, ge=2)

# ============================
# HEALTH CHECKS
# ============================
@app.get("/health")
async def health():
    """Lightweight health check - always returns OK"""
    return {"status": "ok", "message": "Service is alive"}

@app.get("/ready")
async def ready():
    """Readiness check - returns 503 until the checkpoint is loaded"""
    if _is_ready:
        return {"status": "ready", "model_loaded": True}

    return Response(
        content='{"status":"warming_up","model_loaded":false}',
        status_code=503,
        media_type="application/json"
    )

def _not_ready():
    return {
        "ok": False,
        "error": "service_not_ready",
        "detail": "Checkpoint is still loading or failed to load"
    }

# ============================
# MODEL ROUTES
# ============================
@app.get("/model")
async def model_info():
    if not _is_ready:
        return _not_ready()

    from app.runtime import load_runtime
    rt = load_runtime()
    meta = rt["meta"]
    return {
        "ok": True,
        "config": rt["params"].config.model_dump(mode="json"),
        "param_count": rt["param_count"],
        "problem": meta.get("problem"),
        "config_hash": meta.get("config_hash"),
        "grid": meta.get("grid"),
    }

@app.post("/predict")
def predict(req: PredictReq):
    """Evaluate the operator at the requested times"""
    if not _is_ready:
        return _not_ready()

    try:
        from app.ctfno import forward
        from app.runtime import load_runtime

        params = load_runtime()["params"]
        a = np.asarray(req.initial, dtype=np.float64)
        if req.resolution is not None and a.ndim == 3:
            a = resample(a, req.resolution, axis=1)
        pred = forward(params, a, np.asarray(req.times))
        return {
            "ok": True,
            "times": req.times,
            "grid": int(pred.shape[2]),
            "prediction": pred.tolist(),
        }
    except CtfnoError as e:
        return {
            "ok": False,
            "error": e.kind,
            "detail": str(e)
        }
    except Exception as e:
        print("=== predict crash ===")
        traceback.print_exc()
        return {
            "ok": False,
            "error": "predict_failed",
            "detail": str(e)
        }

# ============================
# BACKGROUND WARMUP
# ============================
def background_warmup():
    global _is_ready

    with _warmup_lock:
        try:
            print("[WARMUP] Loading checkpoint...")

            from app.runtime import load_runtime
            load_runtime()

            _is_ready = True
            print("[WARMUP] Service is now READY")

        except Exception as e:
            _is_ready = False
            print("[WARMUP] Checkpoint loading FAILED!")
            print(f"[WARMUP] Error: {e}")
            traceback.print_exc()

# ============================
# ENTRYPOINT
# ============================
if __name__ == "__main__":
    import uvicorn
    port = int(os.environ.get("PORT", 8000))
    print(f"[STARTUP] Starting server on port {port}")
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=port,
        log_level="info",
    )
