# nfar/dynamics.py

import json
import math
import os
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.signal import fftconvolve

from .errors import ShapeError, SimulationOverflowError
from .gp_sampler import NoiseSampler, StationaryKernel
from .grid import GridField, GridSpec, downsample, load_csv, save_csv, sup_norm

OVERFLOW_LIMIT = 1e6


class NfarModel(BaseModel):
    """
    Hammerstein transition Psi_0(x)(u) = int amplitude * K(u - v) * tau(x(v)) dv.

    `nonlinearity` selects tau: 'trig' is c0 + c1 cos(x) + c2 sin(2x), the
    experiment's choice; 'identity' and 'zero' are the linear and pure-noise
    variants used by the mixing audit.
    """
    model_config = ConfigDict(frozen=True)

    kernel: StationaryKernel = StationaryKernel()
    amplitude: float = 5.0
    nonlinearity: Literal['trig', 'identity', 'zero'] = 'trig'
    tau_coeffs: tuple[float, float, float] = (1.5, 2.5, 2.0)
    grid: GridSpec = GridSpec(size=100)
    trunc_level: float | None = Field(None, gt=0, description="M; None disables truncation.")

    def tau(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.nonlinearity == 'identity':
            return x.copy()
        if self.nonlinearity == 'zero':
            return np.zeros_like(x)
        c0, c1, c2 = self.tau_coeffs
        return c0 + c1 * np.cos(x) + c2 * np.sin(2.0 * x)

    @property
    def tau_bound(self) -> float:
        """Analytic sup |tau| (triangle bound); infinite for identity."""
        if self.nonlinearity == 'identity':
            return math.inf
        if self.nonlinearity == 'zero':
            return 0.0
        return float(sum(abs(c) for c in self.tau_coeffs))

    def on_grid(self, grid: GridSpec) -> "NfarModel":
        return self.model_copy(update={'grid': grid})


class NfarPath(BaseModel):
    """Consecutive fields Z_1..Z_T on one grid, stored as a (T, S, S) array."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: GridSpec
    frames: np.ndarray
    seed: int | None = None
    burn_in: int = 0
    model: NfarModel | None = None

    @field_validator('frames', mode='before')
    @classmethod
    def _as_frames(cls, v):
        arr = np.array(v, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] != arr.shape[2]:
            raise ValueError(f"frames must have shape (T, S, S) with T >= 1, got {arr.shape}.")
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, t: int) -> GridField:
        return GridField(spec=self.grid, values=self.frames[t])

    @property
    def fields(self) -> list[GridField]:
        return [self[t] for t in range(len(self))]

    @classmethod
    def from_fields(cls, fields: list[GridField], **meta) -> "NfarPath":
        if not fields:
            raise ValueError("A path needs at least one field.")
        grid = fields[0].spec
        for f in fields:
            if f.spec != grid:
                raise ShapeError("All fields of a path must share one grid.")
        return cls(grid=grid, frames=np.stack([f.values for f in fields]), **meta)


def true_kernel(m: NfarModel, u1, u2, v1, v2, x):
    """psi_0(u, v, x) = amplitude * K(u1 - v1, u2 - v2) * tau(x); broadcasts over arrays."""
    return m.amplitude * m.kernel(np.subtract(u1, v1), np.subtract(u2, v2)) * m.tau(x)


def offset_table(m: NfarModel) -> np.ndarray:
    """K(di/S, dj/S) for integer offsets di, dj in -(S-1)..S-1, index [di + S - 1, dj + S - 1]."""
    S = m.grid.size
    d = np.arange(-(S - 1), S, dtype=np.float64) / S
    return m.kernel(d[:, None], d[None, :])


def _axis_matrix(m: NfarModel) -> np.ndarray:
    # A[i1, i2] = exp(-a ((i1 - i2)/S)^2), gathered from the 1-D offset table.
    S = m.grid.size
    table = m.kernel.profile(np.arange(-(S - 1), S, dtype=np.float64) / S)
    idx = np.arange(S)
    return table[idx[:, None] - idx[None, :] + S - 1]


def _check_grid(m: NfarModel, z: GridField):
    if z.spec != m.grid:
        raise ShapeError(f"Field on a {z.spec.size}-grid passed to a model on a {m.grid.size}-grid.")


def apply_true_operator(m: NfarModel, z: GridField, method: Literal['direct', 'fft'] = 'direct') -> GridField:
    """
    out[i1][j1] = (1/S^2) sum_{i2,j2} amplitude * K((i1-i2)/S, (j1-j2)/S) * tau(z[i2][j2]).

    'direct' uses the offset lookup table; the Gaussian kernel factorizes per
    axis, so the double sum is two table-gathered matrix products. 'fft'
    convolves with the 2-D offset table. Returns zero when sup|z| exceeds
    trunc_level.
    """
    _check_grid(m, z)
    S = m.grid.size
    if m.trunc_level is not None and sup_norm(z) > m.trunc_level:
        return GridField.zeros(m.grid)

    g = m.tau(z.values)
    if method == 'direct':
        A = _axis_matrix(m)
        conv = A @ g @ A.T
    elif method == 'fft':
        full = fftconvolve(g, offset_table(m), mode='full')
        conv = full[S - 1:2 * S - 1, S - 1:2 * S - 1]
    else:
        raise ValueError(f"Unknown method {method!r}.")
    return GridField(spec=m.grid, values=(m.amplitude * m.grid.weight) * conv)


def step(m: NfarModel, z: GridField, noise: GridField) -> GridField:
    """X_{t+1} = Psi_0(X_t) + xi_t."""
    if noise.spec != z.spec:
        raise ShapeError(f"Noise on a {noise.spec.size}-grid does not match state on a {z.spec.size}-grid.")
    return apply_true_operator(m, z) + noise


def simulate_path(m: NfarModel, sampler: NoiseSampler, length: int, burn_in: int = 500,
                  seed: int | None = None) -> NfarPath:
    """
    Iterate from Z_1 = 0 for burn_in + length fields and keep the last `length`.

    Fresh noise is drawn from the sampler for every step.
    """
    if length < 1:
        raise ValueError("Path length must be at least 1.")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative.")
    if sampler.spectrum.size != m.grid.size:
        raise ShapeError(f"Sampler grid {sampler.spectrum.size} does not match model grid {m.grid.size}.")

    total = burn_in + length
    S = m.grid.size
    frames = np.empty((length, S, S))
    z = GridField.zeros(m.grid)
    if burn_in == 0:
        frames[0] = z.values
    for t in range(2, total + 1):
        values = apply_true_operator(m, z).values + sampler.sample_values()
        max_abs = float(np.max(np.abs(values))) if np.all(np.isfinite(values)) else math.inf
        if max_abs > OVERFLOW_LIMIT:
            raise SimulationOverflowError(t, max_abs)
        z = GridField(spec=m.grid, values=values)
        if t > burn_in:
            frames[t - burn_in - 1] = values
    return NfarPath(grid=m.grid, frames=frames, seed=seed, burn_in=burn_in, model=m)


def downsample_path(path: NfarPath, target: GridSpec) -> NfarPath:
    frames = np.stack([downsample(path[t], target).values for t in range(len(path))])
    model = path.model.on_grid(target) if path.model is not None else None
    return NfarPath(grid=target, frames=frames, seed=path.seed, burn_in=path.burn_in, model=model)


# --- Persistence: a directory of CSV frames plus meta.json ---

def save_path(path: NfarPath, out_dir: str, snapshots: list[int] | None = None):
    """
    Write frame_00001.csv .. frame_T.csv and meta.json.

    With `snapshots`, only those 1-based time indices are written.
    """
    os.makedirs(out_dir, exist_ok=True)
    T = len(path)
    indices = list(range(1, T + 1)) if snapshots is None else [t for t in snapshots if 1 <= t <= T]
    width = max(5, len(str(T)))
    for t in indices:
        save_csv(path[t - 1], os.path.join(out_dir, f"frame_{t:0{width}d}.csv"))
    meta = {
        'length': T,
        'grid_size': path.grid.size,
        'seed': path.seed,
        'burn_in': path.burn_in,
        'frames': indices,
        'model': path.model.model_dump(mode='json') if path.model is not None else None,
    }
    with open(os.path.join(out_dir, 'meta.json'), 'w', encoding='utf-8') as fp:
        json.dump(meta, fp, indent=2)


def load_path(in_dir: str) -> NfarPath:
    with open(os.path.join(in_dir, 'meta.json'), encoding='utf-8') as fp:
        meta = json.load(fp)
    if meta['frames'] != list(range(1, meta['length'] + 1)):
        raise ValueError(f"{in_dir} holds snapshots only, not a full path.")
    width = max(5, len(str(meta['length'])))
    frames = [load_csv(os.path.join(in_dir, f"frame_{t:0{width}d}.csv")).values for t in meta['frames']]
    model = NfarModel.model_validate(meta['model']) if meta.get('model') else None
    return NfarPath(grid=GridSpec(size=meta['grid_size']), frames=np.stack(frames),
                    seed=meta.get('seed'), burn_in=meta.get('burn_in', 0), model=model)
