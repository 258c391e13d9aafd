# nfar/utils.py

import math
import os
import tempfile

import numpy as np
import pandas as pd
from dotenv import load_dotenv

# Load environment variables once
load_dotenv()
DATA_DIR = os.getenv("NFAR_DATA_DIR", "data")
OUTPUTS_DIR = os.getenv("NFAR_OUTPUTS_DIR", "outputs")
LOGS_DIR = os.getenv("NFAR_LOGS_DIR", "logs")

AUDIT_COLUMNS = ['timestamp', 'actor', 'action', 'ref_id', 'details']

# Role ids used when splitting the master seed into independent streams.
SEED_ROLES = {
    'train-path': 0,
    'test-point': 1,
    'training': 2,
    'evaluation': 3,
}


def default_workers() -> int:
    """Worker count from NFAR_WORKERS, falling back to a single process."""
    try:
        return max(1, int(os.getenv("NFAR_WORKERS", "1")))
    except ValueError:
        print(f"WARNING: NFAR_WORKERS={os.getenv('NFAR_WORKERS')!r} is not an integer. Using 1 worker.")
        return 1


def master_seed_override() -> int | None:
    value = os.getenv("NFAR_MASTER_SEED")
    return int(value) if value not in (None, "") else None


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """
    Independent generator for the stream identified by (master_seed, *keys).

    The split uses numpy's SeedSequence spawn keys, so streams for different
    keys never overlap and do not depend on the order in which they are built.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def replication_rng(master_seed: int, b: int, T: int, role: str) -> np.random.Generator:
    return derive_rng(master_seed, b, T, SEED_ROLES[role])


def json_safe(obj):
    """Replace inf and NaN (not valid JSON) with None, recursively."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def log_audit(dfs: dict, actor: str, ref_id: str, action: str, details: str):
    """
    Standardized function to log an activity into the AuditLog DataFrame.

    Args:
        dfs (dict): The dictionary of all pipeline DataFrames.
        actor (str): The name of the stage performing the action.
        ref_id (str): The run, cell or artifact affected (e.g. 'b=3,T=500').
        action (str): The specific action performed (e.g. 'CELL_DONE', 'REPORT_GEN').
        details (str): Detailed notes on the outcome.
    """
    audit_log_df = dfs.get('AuditLog', pd.DataFrame())

    if audit_log_df.empty:
        audit_log_df = pd.DataFrame(columns=AUDIT_COLUMNS)

    new_log = pd.DataFrame([{
        'timestamp': pd.Timestamp.now().strftime('%Y-%m-%d %H:%M:%S'),
        'actor': actor,
        'action': action,
        'ref_id': ref_id,
        'details': details
    }])

    if audit_log_df.empty:
        dfs['AuditLog'] = new_log
    else:
        dfs['AuditLog'] = pd.concat([audit_log_df, new_log], ignore_index=True)


def atomic_write_text(path: str, text: str):
    """Write-temp-then-rename so readers never see a half-written file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as fp:
            fp.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def save_dataframes(dfs: dict, outputs_dir: str = OUTPUTS_DIR, logs_dir: str = LOGS_DIR):
    """Saves result tables to the outputs directory and the AuditLog to the logs directory."""
    print("\n--- Saving Run Tables ---")
    for key, df in dfs.items():
        if key == 'AuditLog':
            output_dir = logs_dir
        else:
            output_dir = outputs_dir

        os.makedirs(output_dir, exist_ok=True)
        output_path = os.path.join(output_dir, f"{key}.csv")
        df.to_csv(output_path, index=False)
        print(f"Saved {key} to {output_path}")
