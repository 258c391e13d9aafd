# nfar/learner.py
"""Urysohn operator model, empirical risk, and the early-stopped Adam training loop."""

import math
import time
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dynamics import NfarModel, NfarPath, true_kernel
from .errors import NonFiniteOutputError, ShapeError, TrainingAbortedError
from .grid import GridField, GridSpec, l2_norm_sq, sup_norm
from .network import (AdamState, MlpArchitecture, MlpParams, adam_step, backward_from_output, forward,
                      forward_with_cache, glorot_init)

CHUNK_ROWS = 1 << 16


class TrueKernel:
    """psi_0 of an NfarModel as a kernel on (N, 5) feature rows."""

    def __init__(self, model: NfarModel):
        self.model = model

    def __call__(self, features: np.ndarray) -> np.ndarray:
        f = features
        return true_kernel(self.model, f[:, 0], f[:, 1], f[:, 2], f[:, 3], f[:, 4])


class OperatorModel(BaseModel):
    """
    Psi_psi(z)(u) = (1/S^2) sum_v psi(u, v, z(v)) on an S x S grid.

    `kernel` is a network or any callable on (N, 5) feature rows. With
    'monte_carlo' integration the inner sum is replaced by the mean over
    s_mc grid points drawn uniformly with replacement.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kernel: MlpParams | Callable[[np.ndarray], np.ndarray]
    grid: GridSpec
    integration: Literal['full', 'monte_carlo'] = 'full'
    s_mc: int = Field(500, ge=1)
    trunc_level: float | None = Field(None, gt=0)

    def evaluate_kernel(self, features: np.ndarray) -> np.ndarray:
        if isinstance(self.kernel, MlpParams):
            values = forward(self.kernel, features)[:, 0]
        else:
            values = np.asarray(self.kernel(features), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(values)):
                raise NonFiniteOutputError("Kernel produced a non-finite value.")
        return values

    def with_integration(self, integration: str) -> "OperatorModel":
        return self.model_copy(update={'integration': integration})


def grid_features(grid: GridSpec, sites: np.ndarray, points: np.ndarray, z_flat: np.ndarray) -> np.ndarray:
    """
    Feature rows (u1, u2, v1, v2, z(v)) for every (site, point) pair, site-major.

    `sites` and `points` are flat grid indices; z_flat is either one field of
    length S^2 or one field per site, shape (len(sites), S^2).
    """
    S = grid.size
    c = grid.coords()
    u1, u2 = c[sites // S], c[sites % S]
    v1, v2 = c[points // S], c[points % S]
    n_s, n_p = sites.size, points.size
    feats = np.empty((n_s, n_p, 5))
    feats[:, :, 0] = u1[:, None]
    feats[:, :, 1] = u2[:, None]
    feats[:, :, 2] = v1[None, :]
    feats[:, :, 3] = v2[None, :]
    if z_flat.ndim == 1:
        feats[:, :, 4] = z_flat[points][None, :]
    else:
        feats[:, :, 4] = z_flat[:, points]
    return feats.reshape(-1, 5)


def draw_points(grid: GridSpec, s_mc: int, rng: np.random.Generator) -> np.ndarray:
    """s_mc flat grid indices, uniform with replacement."""
    return rng.integers(0, grid.size * grid.size, size=s_mc)


def _inner_points(model: OperatorModel, rng: np.random.Generator | None, points: np.ndarray | None) -> np.ndarray:
    n = model.grid.size * model.grid.size
    if model.integration == 'full':
        return np.arange(n)
    if points is not None:
        return np.asarray(points, dtype=np.int64)
    if rng is None:
        raise ValueError("Monte Carlo integration needs an rng or an explicit point set.")
    return draw_points(model.grid, model.s_mc, rng)


def apply_operator(model: OperatorModel, z: GridField, rng: np.random.Generator | None = None,
                   points: np.ndarray | None = None) -> GridField:
    """
    Evaluate the operator at every output site.

    Full integration uses all S^2 inner points with weight 1/S^2; Monte Carlo
    uses one shared point set for all sites of this call.
    """
    if z.spec != model.grid:
        raise ShapeError(f"Field on a {z.spec.size}-grid passed to an operator on a {model.grid.size}-grid.")
    if model.trunc_level is not None and sup_norm(z) > model.trunc_level:
        return GridField.zeros(model.grid)

    n = model.grid.size * model.grid.size
    pts = _inner_points(model, rng, points)
    z_flat = z.values.ravel()
    out = np.empty(n)
    per_chunk = max(1, CHUNK_ROWS // pts.size)
    for start in range(0, n, per_chunk):
        sites = np.arange(start, min(start + per_chunk, n))
        vals = model.evaluate_kernel(grid_features(model.grid, sites, pts, z_flat))
        out[sites] = vals.reshape(sites.size, pts.size).mean(axis=1)
    return GridField(spec=model.grid, values=out.reshape(model.grid.size, model.grid.size))


def empirical_risk(model: OperatorModel, path: NfarPath, pairs, rng: np.random.Generator | None = None,
                   points: np.ndarray | None = None) -> float:
    """
    Mean over t in `pairs` of ||Z_{t+1} - Psi(Z_t)||^2 by quadrature (0-based t).

    Monte Carlo integration draws one point set for the whole call unless
    `points` is given.
    """
    pairs = np.asarray(list(pairs), dtype=np.int64)
    if pairs.size == 0:
        raise ValueError("Empirical risk over an empty range.")
    if len(path) < 2:
        raise ValueError("Empirical risk needs a path with at least two fields.")
    if pairs.min() < 0 or pairs.max() > len(path) - 2:
        raise ValueError(f"Pair indices must lie in 0..{len(path) - 2}.")
    if model.integration == 'monte_carlo' and points is None:
        points = _inner_points(model, rng, None)
    total = 0.0
    for t in pairs:
        residual = path[int(t) + 1] - apply_operator(model, path[int(t)], points=points)
        total += l2_norm_sq(residual)
    return total / pairs.size


# --- Training ---

class TrainConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    epochs_max: int = Field(200, ge=1)
    patience: int = Field(20, ge=0)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.8
    s_mc: int = Field(500, ge=1)
    integration: Literal['monte_carlo', 'full'] = 'monte_carlo'
    restore_best: bool = False
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32, 32, 32, 32)

    @model_validator(mode='after')
    def _check(self):
        if self.patience > self.epochs_max:
            raise ValueError(f"patience ({self.patience}) must not exceed epochs_max ({self.epochs_max}).")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1.")
        return self

    @property
    def arch(self) -> MlpArchitecture:
        return MlpArchitecture(input_dim=5, hidden=self.hidden, output_dim=1)


class TrainTrace(BaseModel):
    epochs: list[int] = Field(default_factory=list)
    train_loss: list[float] = Field(default_factory=list)
    val_loss: list[float] = Field(default_factory=list)
    seconds: list[float] = Field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    t_train: int = 0
    mc_policy: str = "training points redrawn per minibatch; validation points fixed per run"
    adam: dict = Field(default_factory=dict)

    @property
    def wall_time(self) -> float:
        return float(sum(self.seconds))

    def to_frame(self):
        import pandas as pd
        return pd.DataFrame({'epoch': self.epochs, 'train_loss': self.train_loss,
                             'val_loss': self.val_loss, 'seconds': self.seconds})


def split_index(T: int, train_fraction: float) -> int:
    """T_train = floor(train_fraction * T)."""
    return int(math.floor(train_fraction * T + 1e-9))


def train_pairs(T: int, t_train: int) -> np.ndarray:
    """0-based t with (Z_t, Z_{t+1}) inside the training block Z_1..Z_{T_train}."""
    return np.arange(0, t_train - 1)


def validation_pairs(T: int, t_train: int) -> np.ndarray:
    """0-based t for the 1-based pairs T_train+1 .. T-1; the boundary pair (T_train, T_train+1) is not used."""
    return np.arange(t_train, T - 1)


def train(path: NfarPath, cfg: TrainConfig, rng: np.random.Generator | None = None,
          verbose: bool = False) -> tuple[OperatorModel, TrainTrace]:
    """
    Fit psi_theta by minibatch Adam on (t, i, j) output triples with early stopping.

    Each epoch shuffles every training triple and consumes them in
    minibatches; Monte Carlo inner points are redrawn per minibatch. The
    validation risk uses one point set fixed for the whole run. Training stops
    once validation has not strictly improved for `patience` consecutive
    epochs, and the final-epoch weights are returned unless restore_best is set.
    """
    T = len(path)
    grid = path.grid
    S2 = grid.size * grid.size
    t_train = split_index(T, cfg.train_fraction)
    tr = train_pairs(T, t_train)
    va = validation_pairs(T, t_train)
    if tr.size == 0 or va.size == 0:
        raise ValueError(f"Path of length {T} leaves an empty training or validation split (T_train={t_train}).")

    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = glorot_init(cfg.arch, rng)
    adam = AdamState.fresh(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    model = OperatorModel(kernel=params, grid=grid, integration=cfg.integration, s_mc=cfg.s_mc)
    val_points = draw_points(grid, cfg.s_mc, rng) if cfg.integration == 'monte_carlo' else None

    frames = path.frames.reshape(T, S2)
    triples = (tr[:, None] * S2 + np.arange(S2)[None, :]).ravel()
    trace = TrainTrace(t_train=t_train, adam={'lr': cfg.lr, 'beta1': cfg.beta1, 'beta2': cfg.beta2, 'eps': cfg.eps})
    best_val, best_params, wait = math.inf, params, 0

    for epoch in range(1, cfg.epochs_max + 1):
        started = time.perf_counter()
        order = triples[rng.permutation(triples.size)]
        batch_losses = []
        for batch_no, start in enumerate(range(0, order.size, cfg.batch_size)):
            ids = order[start:start + cfg.batch_size]
            t_idx, sites = ids // S2, ids % S2
            pts = draw_points(grid, cfg.s_mc, rng) if cfg.integration == 'monte_carlo' else np.arange(S2)
            feats = grid_features(grid, sites, pts, frames[t_idx])
            try:
                out, cache = forward_with_cache(params, feats)
            except NonFiniteOutputError:
                raise TrainingAbortedError(epoch, batch_no, math.nan)
            pred = out.reshape(ids.size, pts.size).mean(axis=1)
            residual = pred - frames[t_idx + 1, sites]
            loss = float(np.mean(residual ** 2))
            if not math.isfinite(loss):
                raise TrainingAbortedError(epoch, batch_no, loss)
            grad_out = np.repeat(2.0 * residual / (ids.size * pts.size), pts.size).reshape(-1, 1)
            grads = backward_from_output(params, cache, grad_out)
            params, adam = adam_step(adam, params, grads)
            batch_losses.append(loss)

        model = model.model_copy(update={'kernel': params})
        try:
            val = empirical_risk(model, path, va, points=val_points)
        except NonFiniteOutputError:
            raise TrainingAbortedError(epoch, -1, math.nan)
        if not math.isfinite(val):
            raise TrainingAbortedError(epoch, -1, val)

        trace.epochs.append(epoch)
        trace.train_loss.append(float(np.mean(batch_losses)))
        trace.val_loss.append(val)
        trace.seconds.append(time.perf_counter() - started)
        if verbose:
            print(f"  epoch {epoch:4d}  train {trace.train_loss[-1]:.6g}  val {val:.6g}")

        if val < best_val:
            best_val, best_params, wait = val, params, 0
            trace.best_epoch = epoch
        else:
            wait += 1
        trace.stop_epoch = epoch
        if wait >= cfg.patience:
            break

    final = best_params if cfg.restore_best else params
    return model.model_copy(update={'kernel': final, 'integration': 'full'}), trace


def true_operator_model(nfar: NfarModel, grid: GridSpec) -> OperatorModel:
    """Psi_{psi_0} as an OperatorModel with full quadrature on `grid`."""
    return OperatorModel(kernel=TrueKernel(nfar.on_grid(grid)), grid=grid, integration='full',
                         trunc_level=nfar.trunc_level)
