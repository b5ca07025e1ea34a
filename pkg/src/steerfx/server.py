"""HTTP facade over one loaded checkpoint for interactive exploration.

The model is immutable after load, so concurrent renders are safe;
uploads mutate the source map under a lock. Sweeps are cached by their
exact request parameters for the life of the process. Rendering shares
the CLI code path, so /api/render bytes match ``steerfx render`` exactly.
"""

from __future__ import annotations

import hashlib
import logging
import math
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import audio
from .audio import AudioBuffer, AudioIOError
from .metrics import GRID_METRICS, grid_sweep
from .model import TcnModel, param_summary

log = logging.getLogger(__name__)

DEFAULT_RENDER_CAP_SECONDS = 30.0
DEFAULT_UPLOAD_QUOTA_BYTES = 64 * 1024 * 1024


class SessionState:
    """One model plus uploaded sources and the sweep cache."""

    def __init__(self, model: TcnModel, render_cap_s: float, quota_bytes: int):
        self.model = model
        self.render_cap_s = render_cap_s
        self.quota_bytes = quota_bytes
        self.sources: dict[str, AudioBuffer] = {}
        self.used_bytes = 0
        self.sweep_cache: dict[tuple, dict] = {}
        self.upload_lock = threading.Lock()

    def resolve_source(self, ref: str) -> AudioBuffer | None:
        if ref in self.sources:
            return self.sources[ref]
        if audio.is_signal_spec(ref):
            try:
                return audio.synth_from_spec(ref, self.model.config.sample_rate)
            except ValueError:
                return None
        return None

    def add_source(self, buffer: AudioBuffer, raw_size: int, name: str | None = None) -> str:
        digest = hashlib.sha256(buffer.samples.tobytes()).hexdigest()[:12]
        source_id = name or digest
        with self.upload_lock:
            if source_id not in self.sources:
                self.sources[source_id] = buffer
                self.used_bytes += raw_size
        return source_id


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    model: TcnModel,
    *,
    static_dir: str | None = None,
    input_dir: str | None = None,
    render_cap_s: float = DEFAULT_RENDER_CAP_SECONDS,
    upload_quota_bytes: int = DEFAULT_UPLOAD_QUOTA_BYTES,
) -> FastAPI:
    from .cli import render_wav_bytes

    state = SessionState(model, render_cap_s, upload_quota_bytes)
    app = FastAPI(title="steerfx", docs_url=None, redoc_url=None)
    app.state.session = state

    if input_dir:
        for path in sorted(Path(input_dir).glob("*.wav")):
            try:
                buffer = audio.to_mono(audio.read_wav(path))
            except AudioIOError as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            if buffer.sample_rate != model.config.sample_rate:
                log.warning("skipping %s: rate %d != model rate %d",
                            path, buffer.sample_rate, model.config.sample_rate)
                continue
            state.add_source(buffer, buffer.samples.nbytes, name=path.stem)
            log.info("loaded source %r from %s", path.stem, path)

    @app.get("/api/model")
    def get_model():
        return param_summary(model)

    @app.get("/api/sources")
    def list_sources():
        return {
            "sources": [
                {"id": sid, "seconds": round(buf.duration, 3)}
                for sid, buf in sorted(state.sources.items())
            ]
        }

    @app.post("/api/sources")
    async def upload_source(request: Request):
        data = await request.body()
        if state.used_bytes + len(data) > state.quota_bytes:
            return _error(413, "upload quota exceeded")
        try:
            buffer = audio.read_wav_bytes(data, "<upload>")
        except AudioIOError as exc:
            return _error(415, f"not a readable WAV: {exc}")
        if buffer.sample_rate != model.config.sample_rate:
            return _error(
                422,
                f"sample rate {buffer.sample_rate} != model rate {model.config.sample_rate}",
            )
        source_id = state.add_source(audio.to_mono(buffer), len(data))
        return {"id": source_id}

    @app.post("/api/render")
    async def render(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "body must be JSON")
        conditioning = payload.get("conditioning")
        source_ref = payload.get("source")
        if not isinstance(source_ref, str):
            return _error(400, "missing source id or spec")
        if not isinstance(conditioning, list) or len(conditioning) != model.config.cond_dim:
            return _error(
                400,
                f"conditioning must be a list of {model.config.cond_dim} reals",
            )
        try:
            c = np.array([float(v) for v in conditioning], dtype=np.float32)
        except (TypeError, ValueError):
            return _error(400, "conditioning values must be numbers")
        if not np.isfinite(c).all():
            return _error(400, "conditioning values must be finite")
        buffer = state.resolve_source(source_ref)
        if buffer is None:
            return _error(404, f"unknown source {source_ref!r}")
        if buffer.duration > state.render_cap_s:
            return _error(
                400,
                f"source is {buffer.duration:.1f} s; render cap is {state.render_cap_s:.0f} s",
            )
        data = render_wav_bytes(model, buffer, c)
        return Response(content=data, media_type="audio/wav")

    @app.get("/api/sweep")
    def sweep(source: str, metric: str = "rms", min: float = -5.0, max: float = 5.0, steps: int = 11):
        if metric not in GRID_METRICS:
            return _error(400, f"metric must be one of {GRID_METRICS}")
        if steps < 2 or steps > 41 or not min < max:
            return _error(400, "invalid lattice: need min < max and 2 <= steps <= 41")
        buffer = state.resolve_source(source)
        if buffer is None:
            return _error(404, f"unknown source {source!r}")
        key = (source, metric, float(min), float(max), int(steps))
        cached = state.sweep_cache.get(key)
        if cached is None:
            result = grid_sweep(
                model, buffer, c0_range=(min, max), c1_range=(min, max), steps=steps, metric=metric
            )
            cached = {
                "metric": metric,
                "c0_axis": [float(v) for v in result.c0_axis],
                "c1_axis": [float(v) for v in result.c1_axis],
                "values": [
                    [None if not math.isfinite(v) else float(v) for v in row]
                    for row in result.values
                ],
                "status": result.status,
            }
            state.sweep_cache[key] = cached
        return cached

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return {
                "service": "steerfx",
                "endpoints": ["/api/model", "/api/sources", "/api/render", "/api/sweep"],
            }

    return app
