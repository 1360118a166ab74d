"""HTTP inference endpoint: frozen checkpoints in, voxel shapes out.

The app loads a pipeline once and serves POST /generate (sketch to k shapes,
each classified for the response metadata) and GET /health (fingerprints and
readiness). Models are never mutated; concurrent requests share them.
"""

from __future__ import annotations

import base64
import time
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .shapes import CATEGORIES
from .sketch_io import PayloadError, sketch_from_payload
from .voxels import pack_occupancy


class GenerateRequest(BaseModel):
    image: str
    samples: int = Field(default=5, ge=1, le=16)
    steps: int = Field(default=15, ge=1, le=64)
    scale: float = Field(default=3.0, ge=0.0, le=20.0)
    seed: Optional[int] = None


class SampleOut(BaseModel):
    occupancy_b64: str
    category: str
    confidence: float
    unmasked_per_step: list[int]


class GenerateResponse(BaseModel):
    samples: list[SampleOut]
    seed: int
    fingerprints: dict
    elapsed_ms: float


def create_app(pipeline=None, loader=None):
    """Build the app; ``loader`` may supply the pipeline lazily at startup."""
    from contextlib import asynccontextmanager

    state = {"pipeline": pipeline, "started": time.time()}

    @asynccontextmanager
    async def lifespan(_app):
        if state["pipeline"] is None and loader is not None:
            try:
                state["pipeline"] = loader()
            except Exception as exc:  # stay up, report not ready
                state["load_error"] = str(exc)
        yield

    app = FastAPI(title="voxsketch inference service", lifespan=lifespan)
    from fastapi.middleware.cors import CORSMiddleware

    # the sketchpad client is served from a different origin
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/health")
    def health():
        ready = state["pipeline"] is not None
        body = {
            "ready": ready,
            "uptime_s": time.time() - state["started"],
            "fingerprints": state["pipeline"].fingerprints() if ready else {},
        }
        if not ready and "load_error" in state:
            body["error"] = state["load_error"]
        return body

    @app.post("/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest):
        pipeline = state["pipeline"]
        if pipeline is None:
            raise HTTPException(status_code=503, detail="checkpoints not loaded")
        try:
            sketch = sketch_from_payload(request.image)
        except PayloadError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        seed = request.seed
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**31))
        start = time.time()
        grids, _, traces = pipeline.generate(
            sketch, k=request.samples, seed=seed,
            steps=request.steps, scale=request.scale,
        )
        preds, probs = pipeline.classifier.predict_batch(np.stack(grids))
        samples = []
        for grid, pred, prob, trace in zip(grids, preds, probs, traces):
            samples.append(
                SampleOut(
                    occupancy_b64=base64.b64encode(pack_occupancy(grid)).decode("ascii"),
                    category=CATEGORIES[int(pred)],
                    confidence=float(prob[int(pred)]),
                    unmasked_per_step=trace.accepted_per_step(),
                )
            )
        return GenerateResponse(
            samples=samples,
            seed=seed,
            fingerprints=pipeline.fingerprints(),
            elapsed_ms=(time.time() - start) * 1000.0,
        )

    return app
