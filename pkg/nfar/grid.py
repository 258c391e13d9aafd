# nfar/grid.py

import io
import json

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ShapeError


class GridSpec(BaseModel):
    """Uniform S x S grid of left endpoints i/S on [0,1)^2."""
    model_config = ConfigDict(frozen=True)

    size: int = Field(ge=2, description="Points per axis (S).")

    @property
    def spacing(self) -> float:
        return 1.0 / self.size

    @property
    def weight(self) -> float:
        """Quadrature weight 1/S^2 of every grid point."""
        return 1.0 / (self.size * self.size)

    def coords(self) -> np.ndarray:
        return np.arange(self.size, dtype=np.float64) / self.size

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates (u1, u2) of every grid point, each of shape (S, S)."""
        c = self.coords()
        return np.meshgrid(c, c, indexing='ij')


class GridField(BaseModel):
    """Real values f(i/S, j/S) on a GridSpec; values[i][j] is the point (i/S, j/S)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: GridSpec
    values: np.ndarray

    @field_validator('values', mode='before')
    @classmethod
    def _as_float_array(cls, v):
        arr = np.array(v, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"GridField values must be 2-D, got shape {arr.shape}.")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GridField values must be finite.")
        arr.setflags(write=False)
        return arr

    @model_validator(mode='after')
    def _shape_matches_spec(self):
        S = self.spec.size
        if self.values.shape != (S, S):
            raise ValueError(f"values shape {self.values.shape} does not match grid size {S}.")
        return self

    @classmethod
    def from_array(cls, values) -> "GridField":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"Expected a square 2-D array, got shape {arr.shape}.")
        return cls(spec=GridSpec(size=arr.shape[0]), values=arr)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridField":
        return cls(spec=spec, values=np.zeros((spec.size, spec.size)))

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "GridField":
        return cls(spec=spec, values=np.full((spec.size, spec.size), float(value)))

    def map(self, func) -> "GridField":
        """Pointwise image func(f)."""
        return GridField(spec=self.spec, values=func(self.values))

    def __add__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(spec=self.spec, values=self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(spec=self.spec, values=self.values - other.values)

    def scale(self, alpha: float) -> "GridField":
        return GridField(spec=self.spec, values=alpha * self.values)


def _check_same_grid(a: GridField, b: GridField):
    if a.spec != b.spec:
        raise ShapeError(f"Grid mismatch: {a.spec.size} vs {b.spec.size}.")


def l2_norm_sq(f: GridField) -> float:
    """Quadrature version of ||f||_H^2, i.e. vec(f^2)^T w with w = 1/S^2."""
    sq = np.square(f.values).ravel()
    w = np.full(sq.shape, f.spec.weight)
    return float(sq @ w)


def l2_norm(f: GridField) -> float:
    return float(np.sqrt(l2_norm_sq(f)))


def sup_norm(f: GridField) -> float:
    return float(np.max(np.abs(f.values)))


def downsample_factor(source: GridSpec, target: GridSpec) -> int:
    if source.size % target.size != 0:
        raise ShapeError(f"Cannot downsample a {source.size}-grid to a {target.size}-grid: sizes are not divisible.")
    return source.size // target.size


def downsample(f: GridField, target: GridSpec) -> GridField:
    """Point evaluation on the coarser grid: out[i][j] = f[k*i][k*j], no averaging."""
    k = downsample_factor(f.spec, target)
    return GridField(spec=target, values=f.values[::k, ::k])


# --- Serialization ---

def to_csv(f: GridField) -> str:
    """Row-major CSV: S rows of S comma-separated values."""
    buf = io.StringIO()
    pd.DataFrame(f.values).to_csv(buf, header=False, index=False, float_format='%.17g', lineterminator='\n')
    return buf.getvalue()


def from_csv(text: str) -> GridField:
    values = pd.read_csv(io.StringIO(text), header=None, dtype=np.float64, float_precision='round_trip').to_numpy()
    return GridField.from_array(values)


def save_csv(f: GridField, path: str):
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fp.write(to_csv(f))


def load_csv(path: str) -> GridField:
    with open(path, encoding="utf-8") as fp:
        return from_csv(fp.read())


def to_json(f: GridField) -> str:
    return json.dumps({'size': f.spec.size, 'values': f.values.tolist()})


def from_json(text: str) -> GridField:
    payload = json.loads(text)
    return GridField(spec=GridSpec(size=payload['size']), values=payload['values'])
