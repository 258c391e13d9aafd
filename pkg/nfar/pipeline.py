# nfar/pipeline.py

import math
import os

import anyio
import pandas as pd

from .experiment import ExperimentConfig, SweepRunner, load_config
from .learner import train
from .reporting import emit_artifacts
from .utils import LOGS_DIR, default_workers, log_audit, save_dataframes


def frame_records(df: pd.DataFrame) -> list[dict]:
    # NaN is not valid JSON; std of a single replication is NaN.
    return df.astype(object).where(df.notna(), None).to_dict(orient='records')


def run_pipeline(cfg: ExperimentConfig, out_dir: str, workers: int | None = None,
                 logs_dir: str = LOGS_DIR, trainer=train) -> dict:
    """
    Sweep every (b, T) cell into out_dir, then write the report artifacts.

    Returns the summary rows, the log-log slope and any incomplete cells.
    """
    print("--- Starting NFAR sample-size sweep ---")
    workers = workers if workers is not None else default_workers()
    os.makedirs(out_dir, exist_ok=True)

    # 1. Sweep (resumes from cells already on disk)
    runner = SweepRunner(cfg, out_dir, workers=workers, trainer=trainer)
    result = runner.run()
    dfs = runner.dfs
    print(f"\n1. Sweep: {len(result.results)} cells done, {len(result.incomplete)} incomplete.")

    # 2. Reporting
    if result.empty:
        print("WARNING: No completed cells. Skipping artifact generation.")
        log_audit(dfs, 'Pipeline', out_dir, 'REPORT_SKIPPED', "No completed cells.")
        artifacts = []
    else:
        artifacts = emit_artifacts(result, out_dir, dfs)
        print("\n2. Reporting: Tables, log-log plot and surfaces generated.")

    save_dataframes({'AuditLog': dfs['AuditLog']}, out_dir, logs_dir)
    print("\n--- Sweep Completed ---")
    return {
        'run_dir': out_dir,
        'summary': frame_records(result.summary),
        'slope': None if math.isnan(result.slope) else result.slope,
        'incomplete': [list(cell) for cell in result.incomplete],
        'failures': result.failures,
        'artifacts': artifacts,
    }


def run_config_pipeline(config_path: str, out_dir: str, workers: int | None = None,
                        logs_dir: str = LOGS_DIR) -> dict:
    return run_pipeline(load_config(config_path), out_dir, workers=workers, logs_dir=logs_dir)


async def run_async_pipeline(config_path: str, out_dir: str, workers: int | None = None) -> dict:
    """Runs the blocking sweep on a worker thread so the event loop stays responsive."""
    return await anyio.to_thread.run_sync(run_config_pipeline, config_path, out_dir, workers)
