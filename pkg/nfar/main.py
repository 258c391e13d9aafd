# nfar/main.py

import os
from typing import Literal

import pandas as pd
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, ValidationError

from .diagnostics import MAX_DENSE_GRID, run_condition_checks
from .dynamics import NfarModel
from .errors import NfarError
from .gp_sampler import EmbeddingPolicy, StationaryKernel, build_spectrum
from .grid import GridSpec
from .pipeline import frame_records, run_async_pipeline
from .utils import OUTPUTS_DIR, default_workers, json_safe

app = FastAPI(
    title="NFAR Simulation and Learning API",
    description="Endpoints for embedding and condition checks and for triggering sample-size sweeps."
)


class ConditionRequest(BaseModel):
    grid_size: int = Field(16, ge=2, le=MAX_DENSE_GRID)
    scale: float = Field(5.0, gt=0)
    amplitude: float = 5.0
    nonlinearity: Literal["trig", "identity", "zero"] = "trig"
    length: int = Field(2000, ge=1)
    burn_in: int = Field(500, ge=0)
    seed: int = 0
    m_terms: int = Field(50, ge=1)
    max_lag: int = Field(20, ge=1)
    policy: EmbeddingPolicy = 'clamp'


class SweepRequest(BaseModel):
    config_path: str
    out_dir: str | None = None
    workers: int | None = Field(None, ge=1)


@app.get("/api/v1/check_embedding")
def check_embedding(grid_size: int = 100, scale: float = 5.0, policy: EmbeddingPolicy = 'clamp'):
    if grid_size < 1 or scale <= 0:
        raise HTTPException(status_code=400, detail="grid_size must be >= 1 and scale > 0.")
    try:
        spectrum = build_spectrum(StationaryKernel(scale=scale), grid_size, policy)
    except NfarError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return spectrum.report()


@app.post("/api/v1/check_conditions")
def check_conditions(payload: ConditionRequest):
    print(f"Condition check requested at S={payload.grid_size}, T={payload.length}.")
    try:
        model = NfarModel(kernel=StationaryKernel(scale=payload.scale), amplitude=payload.amplitude,
                          nonlinearity=payload.nonlinearity, grid=GridSpec(size=payload.grid_size))
        report = run_condition_checks(model, length=payload.length, seed=payload.seed, burn_in=payload.burn_in,
                                      m_terms=payload.m_terms, max_lag=payload.max_lag, policy=payload.policy)
        return json_safe(report)
    except (NfarError, ValueError, ArithmeticError) as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.post("/api/v1/trigger_sweep")
async def trigger_sweep(payload: SweepRequest):
    print(f"Sweep triggered with config {payload.config_path}.")
    if not os.path.exists(payload.config_path):
        raise HTTPException(status_code=404, detail=f"Config {payload.config_path} not found.")
    name = os.path.splitext(os.path.basename(payload.config_path))[0]
    out_dir = payload.out_dir or os.path.join(OUTPUTS_DIR, name)
    workers = payload.workers or default_workers()
    try:
        return await run_async_pipeline(payload.config_path, out_dir, workers)
    except (ValidationError, NfarError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.get("/api/v1/runs/{run_name}/summary")
def run_summary(run_name: str):
    if os.path.basename(run_name) != run_name or run_name in ('', '.', '..'):
        raise HTTPException(status_code=400, detail="Invalid run name.")
    path = os.path.join(OUTPUTS_DIR, run_name, 'summary.csv')
    if not os.path.exists(path):
        raise HTTPException(status_code=404, detail=f"Run {run_name} has no summary.")
    return {'run': run_name, 'summary': frame_records(pd.read_csv(path))}
