# nfar/experiment.py
"""
Sample-size sweep: B replications per T, each simulating a path, training a
kernel network and scoring it against the true operator on an independent
test field.

Cells (b, T) are independent jobs. Each finished cell is persisted as one
JSON file, so an interrupted sweep resumes where it stopped.
"""

import json
import math
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Callable, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import linregress

from .dynamics import NfarModel, NfarPath, apply_true_operator, downsample_path, simulate_path
from .errors import NfarError, ReplicationError
from .gp_sampler import EmbeddingPolicy, NoiseSampler, StationaryKernel, cached_spectrum
from .grid import GridField, GridSpec, downsample, l2_norm_sq, to_csv
from .learner import OperatorModel, TrainConfig, TrainTrace, apply_operator, train
from .network import MlpParams, dump_checkpoint
from .utils import atomic_write_text, derive_rng, log_audit, master_seed_override, replication_rng, SEED_ROLES

DEFAULT_T_VALUES = [250, 500, 750, 1000, 1250, 1500, 1750, 2000, 3000, 4000, 5000]


class ModelSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    scale: float = Field(5.0, gt=0)
    amplitude: float = 5.0
    nonlinearity: Literal['trig', 'identity', 'zero'] = 'trig'
    tau_coeffs: tuple[float, float, float] = (1.5, 2.5, 2.0)
    trunc_level: float | None = Field(None, gt=0)
    embedding: EmbeddingPolicy = 'clamp'

    def build(self, grid: GridSpec) -> NfarModel:
        return NfarModel(kernel=StationaryKernel(scale=self.scale), amplitude=self.amplitude,
                         nonlinearity=self.nonlinearity, tau_coeffs=self.tau_coeffs,
                         grid=grid, trunc_level=self.trunc_level)


class SimSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    sim_grid: int = Field(100, ge=2)
    learn_grid: int = Field(25, ge=2)
    burn_in: int = Field(500, ge=0)
    true_on_sim_grid: bool = False

    @model_validator(mode='after')
    def _divides(self):
        if self.sim_grid % self.learn_grid != 0:
            raise ValueError(f"learn_grid {self.learn_grid} must divide sim_grid {self.sim_grid}.")
        return self


class SweepSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    T_values: list[int] = Field(default_factory=lambda: list(DEFAULT_T_VALUES))
    B: int = Field(161, ge=1)
    master_seed: int = 0
    designated_b: int = Field(0, ge=0)
    designated_T: int | None = None

    @field_validator('T_values')
    @classmethod
    def _increasing(cls, v):
        if not v:
            raise ValueError("T_values must not be empty.")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"T_values must be strictly increasing, got {v}.")
        if v[0] < 6:
            raise ValueError("Every T must be at least 6 so both training splits are non-empty.")
        return v

    @model_validator(mode='after')
    def _designated(self):
        if self.designated_T is not None and self.designated_T not in self.T_values:
            raise ValueError(f"designated_T={self.designated_T} is not one of T_values.")
        if self.designated_b >= self.B:
            raise ValueError(f"designated_b={self.designated_b} must be below B={self.B}.")
        return self

    @property
    def designated(self) -> tuple[int, int]:
        return self.designated_b, self.designated_T if self.designated_T is not None else self.T_values[-1]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model: ModelSection = ModelSection()
    sim: SimSection = SimSection()
    train: TrainConfig = TrainConfig()
    sweep: SweepSection = SweepSection()

    @property
    def sim_spec(self) -> GridSpec:
        return GridSpec(size=self.sim.sim_grid)

    @property
    def learn_spec(self) -> GridSpec:
        return GridSpec(size=self.sim.learn_grid)

    def nfar_model(self) -> NfarModel:
        return self.model.build(self.sim_spec)


def load_config(path: str) -> ExperimentConfig:
    """Parse a TOML experiment file; NFAR_MASTER_SEED, when set, replaces sweep.master_seed."""
    with open(path, 'rb') as fp:
        data = tomllib.load(fp)
    cfg = ExperimentConfig.model_validate(data)
    override = master_seed_override()
    if override is not None:
        cfg = cfg.model_copy(update={'sweep': cfg.sweep.model_copy(update={'master_seed': override})})
    return cfg


# --- One replication ---

Trainer = Callable[..., tuple[OperatorModel, TrainTrace]]


class ReplicationOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    b: int
    T: int
    g: float
    trace: TrainTrace
    learned: OperatorModel
    true_field: GridField
    predicted_field: GridField


def draw_test_field(cfg: ExperimentConfig, rng: np.random.Generator) -> GridField:
    """Last field of an independent burn-in run on the simulation grid."""
    sampler = NoiseSampler(cached_spectrum(cfg.nfar_model().kernel, cfg.sim.sim_grid, cfg.model.embedding), rng)
    return simulate_path(cfg.nfar_model(), sampler, 1, burn_in=cfg.sim.burn_in)[0]


def generalization_error(cfg: ExperimentConfig, learned: OperatorModel,
                         z_sim: GridField) -> tuple[float, GridField, GridField]:
    """
    g = (1/S^2) sum_ij [Psi_learned(z)(i,j) - Psi_0(z)(i,j)]^2 on the learning grid, full quadrature.

    Returns g with the true and predicted fields.
    """
    learn = cfg.learn_spec
    z = downsample(z_sim, learn)
    if cfg.sim.true_on_sim_grid:
        true_field = downsample(apply_true_operator(cfg.nfar_model(), z_sim), learn)
    else:
        true_field = apply_true_operator(cfg.nfar_model().on_grid(learn), z)
    predicted = apply_operator(learned.with_integration('full'), z)
    return l2_norm_sq(predicted - true_field), true_field, predicted


def simulate_training_path(cfg: ExperimentConfig, T: int, rng: np.random.Generator,
                           seed: int | None = None) -> NfarPath:
    model = cfg.nfar_model()
    sampler = NoiseSampler(cached_spectrum(model.kernel, cfg.sim.sim_grid, cfg.model.embedding), rng)
    path = simulate_path(model, sampler, T, burn_in=cfg.sim.burn_in, seed=seed)
    return downsample_path(path, cfg.learn_spec)


def run_replication(cfg: ExperimentConfig, b: int, T: int, trainer: Trainer = train) -> ReplicationOutcome:
    """Simulate, train and score cell (b, T); every random draw comes from (master_seed, b, T, role)."""
    master = cfg.sweep.master_seed
    try:
        path = simulate_training_path(cfg, T, replication_rng(master, b, T, 'train-path'))
        z_sim = draw_test_field(cfg, replication_rng(master, b, T, 'test-point'))
        learned, trace = trainer(path, cfg.train, rng=replication_rng(master, b, T, 'training'))
        g, true_field, predicted = generalization_error(cfg, learned, z_sim)
    except (NfarError, ArithmeticError) as e:
        raise ReplicationError(b, T, e) from e
    return ReplicationOutcome(b=b, T=T, g=g, trace=trace, learned=learned,
                              true_field=true_field, predicted_field=predicted)


def evaluate_checkpoint(cfg: ExperimentConfig, params: MlpParams, test_seed: int) -> dict:
    """g for a saved network against a fresh test field drawn from test_seed."""
    learned = OperatorModel(kernel=params, grid=cfg.learn_spec, integration='full')
    z_sim = draw_test_field(cfg, derive_rng(test_seed, SEED_ROLES['evaluation']))
    g, _, _ = generalization_error(cfg, learned, z_sim)
    return {'g': g, 'test_seed': test_seed, 'grid_size': cfg.sim.learn_grid}


# --- Sweep ---

class CellRecord(BaseModel):
    b: int
    T: int
    status: Literal['done', 'failed']
    g: float | None = None
    stop_epoch: int | None = None
    seconds: float | None = None
    error: str | None = None


def cell_name(b: int, T: int) -> str:
    return f"b{b:04d}_T{T:05d}"


def _run_cell(cfg_data: dict, b: int, T: int, cells_dir: str, designated: bool,
              trainer: Trainer = train) -> dict:
    """Worker entry point; returns a CellRecord as a dict."""
    cfg = ExperimentConfig.model_validate(cfg_data)
    started = time.perf_counter()
    try:
        out = run_replication(cfg, b, T, trainer=trainer)
    except ReplicationError as e:
        return CellRecord(b=b, T=T, status='failed', error=str(e)).model_dump()
    if designated:
        stem = os.path.join(cells_dir, cell_name(b, T))
        atomic_write_text(f"{stem}_true.csv", to_csv(out.true_field))
        atomic_write_text(f"{stem}_predicted.csv", to_csv(out.predicted_field))
        if isinstance(out.learned.kernel, MlpParams):
            atomic_write_text(f"{stem}_checkpoint.json",
                              dump_checkpoint(out.learned.kernel, seed=cfg.sweep.master_seed,
                                              epoch=out.trace.stop_epoch))
    return CellRecord(b=b, T=T, status='done', g=out.g, stop_epoch=out.trace.stop_epoch,
                      seconds=time.perf_counter() - started).model_dump()


class SweepResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run_dir: str
    results: pd.DataFrame
    summary: pd.DataFrame
    timings: pd.DataFrame
    failures: list[dict] = Field(default_factory=list)
    incomplete: list[tuple[int, int]] = Field(default_factory=list)
    designated: tuple[int, int] | None = None
    slope: float = math.nan

    @property
    def complete(self) -> bool:
        return not self.incomplete

    @property
    def empty(self) -> bool:
        return self.results.empty


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Per T: G = mean of g over b, sample std, stderr = std / sqrt(n), n."""
    if results.empty:
        return pd.DataFrame(columns=['T', 'G', 'std', 'stderr', 'n'])
    grouped = results.groupby('T', sort=True)['g']
    summary = grouped.agg(G='mean', std='std', n='count').reset_index()
    summary['stderr'] = summary['std'] / np.sqrt(summary['n'])
    return summary[['T', 'G', 'std', 'stderr', 'n']]


def loglog_slope(summary: pd.DataFrame) -> float:
    """Least-squares slope of log10 G against log10 T; NaN with fewer than two usable points."""
    usable = summary[(summary['G'] > 0) & summary['G'].notna()]
    if len(usable) < 2:
        return math.nan
    fit = linregress(np.log10(usable['T'].to_numpy(dtype=float)), np.log10(usable['G'].to_numpy(dtype=float)))
    return float(fit.slope)


class SweepRunner:
    """
    Runs every (b, T) cell of a config into `run_dir`.

    Layout: config.json, cells/<b####_T#####>.json (one per finished cell,
    written atomically) and cells/index.jsonl (append-only completion log).
    Cells with status 'done' are skipped on a rerun; failed cells are retried.
    """

    def __init__(self, cfg: ExperimentConfig, run_dir: str, workers: int = 1, trainer: Trainer = train):
        self.cfg = cfg
        self.run_dir = run_dir
        self.cells_dir = os.path.join(run_dir, 'cells')
        self.workers = max(1, int(workers))
        self.trainer = trainer
        self.dfs = {}

    def _check_config(self):
        path = os.path.join(self.run_dir, 'config.json')
        current = self.cfg.model_dump(mode='json')
        if os.path.exists(path):
            with open(path, encoding='utf-8') as fp:
                stored = json.load(fp)
            if stored != current:
                raise ValueError(f"{self.run_dir} holds a sweep with a different config; use a new output directory.")
        else:
            atomic_write_text(path, json.dumps(current, indent=2))

    def _cell_path(self, b: int, T: int) -> str:
        return os.path.join(self.cells_dir, f"{cell_name(b, T)}.json")

    def load_cell(self, b: int, T: int) -> CellRecord | None:
        path = self._cell_path(b, T)
        if not os.path.exists(path):
            return None
        with open(path, encoding='utf-8') as fp:
            return CellRecord.model_validate_json(fp.read())

    def _store(self, record: CellRecord):
        atomic_write_text(self._cell_path(record.b, record.T), record.model_dump_json())
        with open(os.path.join(self.cells_dir, 'index.jsonl'), 'a', encoding='utf-8') as fp:
            fp.write(json.dumps({'b': record.b, 'T': record.T, 'status': record.status}) + "\n")
        ref = f"b={record.b},T={record.T}"
        if record.status == 'done':
            print(f"  - Cell {ref}: g = {record.g:.6g} (stop epoch {record.stop_epoch})")
            log_audit(self.dfs, self.__class__.__name__, ref, 'CELL_DONE', f"g={record.g!r}")
        else:
            print(f"  - WARNING: Cell {ref} failed: {record.error}")
            log_audit(self.dfs, self.__class__.__name__, ref, 'CELL_FAILED', record.error or "")

    def pending_cells(self) -> list[tuple[int, int]]:
        todo = []
        for T in self.cfg.sweep.T_values:
            for b in range(self.cfg.sweep.B):
                rec = self.load_cell(b, T)
                if rec is None or rec.status != 'done':
                    todo.append((b, T))
        return todo

    def run(self) -> SweepResult:
        print(f"\nSweep: B={self.cfg.sweep.B}, T={self.cfg.sweep.T_values}, workers={self.workers}")
        os.makedirs(self.cells_dir, exist_ok=True)
        self._check_config()
        todo = self.pending_cells()
        total = self.cfg.sweep.B * len(self.cfg.sweep.T_values)
        print(f"  - {total - len(todo)} of {total} cells already done; running {len(todo)}.")
        designated = self.cfg.sweep.designated
        cfg_data = self.cfg.model_dump(mode='json')

        if self.workers == 1:
            for b, T in todo:
                rec = _run_cell(cfg_data, b, T, self.cells_dir, (b, T) == designated, self.trainer)
                self._store(CellRecord.model_validate(rec))
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = {pool.submit(_run_cell, cfg_data, b, T, self.cells_dir, (b, T) == designated,
                                       self.trainer): (b, T) for b, T in todo}
                for fut in as_completed(futures):
                    self._store(CellRecord.model_validate(fut.result()))

        return self.collect()

    def collect(self) -> SweepResult:
        """Aggregate stored cells; rows are ordered by (T, b) whatever the completion order."""
        done, failures, incomplete = [], [], []
        for T in self.cfg.sweep.T_values:
            for b in range(self.cfg.sweep.B):
                rec = self.load_cell(b, T)
                if rec is not None and rec.status == 'done':
                    done.append(rec)
                else:
                    incomplete.append((b, T))
                    if rec is not None:
                        failures.append(rec.model_dump())
        results = pd.DataFrame([{'b': r.b, 'T': r.T, 'g': r.g, 'stop_epoch': r.stop_epoch} for r in done],
                               columns=['b', 'T', 'g', 'stop_epoch'])
        timings = pd.DataFrame([{'b': r.b, 'T': r.T, 'seconds': r.seconds} for r in done],
                               columns=['b', 'T', 'seconds'])
        summary = summarize(results)
        slope = loglog_slope(summary)
        if incomplete:
            print(f"  - WARNING: {len(incomplete)} cells are incomplete.")
        log_audit(self.dfs, self.__class__.__name__, self.run_dir, 'SWEEP_COLLECT',
                  f"{len(done)} done, {len(incomplete)} incomplete, slope={slope!r}")
        return SweepResult(run_dir=self.run_dir, results=results, summary=summary, timings=timings,
                           failures=failures, incomplete=incomplete, designated=self.cfg.sweep.designated,
                           slope=slope)


def run_sweep(cfg: ExperimentConfig, run_dir: str, workers: int = 1, trainer: Trainer = train) -> SweepResult:
    return SweepRunner(cfg, run_dir, workers=workers, trainer=trainer).run()
