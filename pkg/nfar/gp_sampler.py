# nfar/gp_sampler.py

from functools import lru_cache
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import EmbeddingError
from .grid import GridField, GridSpec

# Period of the torus the kernel is wrapped onto. Grid points i/S with
# i = 0..2S-1 cover [0, 2).
PERIOD = 2
NEGATIVE_TOLERANCE = 1e-9
IMAGINARY_TOLERANCE = 1e-9

EmbeddingPolicy = Literal['strict', 'clamp', 'clamp_rescale']


class StationaryKernel(BaseModel):
    """Gaussian covariance K(h1, h2) = exp{-a (h1^2 + h2^2)}."""
    model_config = ConfigDict(frozen=True)

    scale: float = Field(5.0, gt=0, description="Decay rate a.")

    def __call__(self, h1, h2):
        h1 = np.asarray(h1, dtype=np.float64)
        h2 = np.asarray(h2, dtype=np.float64)
        return np.exp(-self.scale * (h1 * h1 + h2 * h2))

    def profile(self, h):
        """One-axis factor exp(-a h^2); K(h1, h2) = profile(h1) * profile(h2)."""
        h = np.asarray(h, dtype=np.float64)
        return np.exp(-self.scale * h * h)


class CirculantSpectrum(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    size: int = Field(ge=1, description="Target grid size S; the torus grid is 2S x 2S.")
    period: int = PERIOD
    lambdas: np.ndarray
    min_raw: float
    max_raw: float
    max_imag: float
    clamp_count: int
    policy: EmbeddingPolicy = 'clamp'
    warnings: list[str] = Field(default_factory=list)

    @property
    def within_tolerance(self) -> bool:
        """True when every raw eigenvalue is above -1e-9 * max|lambda|, i.e. the embedding is exact up to roundoff."""
        return self.min_raw >= -NEGATIVE_TOLERANCE * self.max_raw

    @property
    def torus_size(self) -> int:
        return 2 * self.size

    def report(self) -> dict:
        """Summary used by the check-embedding command."""
        return {
            'grid_size': self.size,
            'torus_size': self.torus_size,
            'lambda_min': self.min_raw,
            'lambda_max': self.max_raw,
            'lambda_min_clamped': float(self.lambdas.min()),
            'max_imag_residue': self.max_imag,
            'clamp_count': self.clamp_count,
            'relative_min': self.min_raw / self.max_raw if self.max_raw > 0 else 0.0,
            'within_tolerance': self.within_tolerance,
            'policy': self.policy,
            'warnings': list(self.warnings),
        }


def _grid_size(grid: GridSpec | int) -> int:
    return grid.size if isinstance(grid, GridSpec) else int(grid)


def wrap_kernel(k: StationaryKernel, grid: GridSpec | int) -> np.ndarray:
    """K_circ(i/S, j/S) = K(min(u1, 2-u1), min(u2, 2-u2)) on the 2S x 2S torus grid."""
    S = _grid_size(grid)
    u = np.arange(2 * S, dtype=np.float64) / S
    w = np.minimum(u, PERIOD - u)
    return k(w[:, None], w[None, :])


def build_spectrum(k: StationaryKernel, grid: GridSpec | int, policy: EmbeddingPolicy = 'clamp') -> CirculantSpectrum:
    """
    Eigenvalues of the circulant embedding, lambda_pq = sum K_circ exp(-2 pi i (pi + qj)/2S).

    This is numpy's unnormalized forward fft2. Negative eigenvalues within
    1e-9 * max|lambda| are roundoff and always clamped to zero. Below that:
      'strict'        raises EmbeddingError,
      'clamp'         sets them to zero (approximate embedding),
      'clamp_rescale' sets them to zero and rescales so sum(lambda), hence
                      the marginal variance, is unchanged.
    The min-wrapped Gaussian has a cusp at the antipode, so for a = 5 a few
    eigenvalues sit around -3e-4 * max and 'strict' rejects it.
    """
    S = _grid_size(grid)
    raw = np.fft.fft2(wrap_kernel(k, S))
    scale = float(np.max(np.abs(raw)))
    max_imag = float(np.max(np.abs(raw.imag)))
    if max_imag > IMAGINARY_TOLERANCE * scale:
        raise EmbeddingError(f"Spectrum has imaginary residue {max_imag:.3g} (> {IMAGINARY_TOLERANCE:g} * {scale:.3g}).")

    lam = raw.real.copy()
    min_raw = float(lam.min())
    beyond_roundoff = min_raw < -NEGATIVE_TOLERANCE * scale
    if beyond_roundoff and policy == 'strict':
        raise EmbeddingError(
            f"Kernel with scale {k.scale} is not positively embeddable at S={S}: "
            f"min lambda = {min_raw:.3g}, max lambda = {scale:.3g}."
        )
    negative = lam < 0
    clamp_count = int(negative.sum())
    total = float(lam.sum())
    lam[negative] = 0.0
    warnings = []
    if beyond_roundoff:
        warnings.append(f"Clamped {clamp_count} negative eigenvalues (min {min_raw:.3g}, "
                        f"{min_raw / scale:.2g} of max) to zero; the embedding is approximate.")
        print(f"WARNING: {warnings[-1]}")
        if policy == 'clamp_rescale':
            lam *= total / float(lam.sum())
    lam.setflags(write=False)

    return CirculantSpectrum(
        size=S, lambdas=lam, min_raw=min_raw, max_raw=float(lam.max()),
        max_imag=max_imag, clamp_count=clamp_count, policy=policy, warnings=warnings,
    )


@lru_cache(maxsize=16)
def cached_spectrum(k: StationaryKernel, size: int, policy: EmbeddingPolicy = 'clamp') -> CirculantSpectrum:
    return build_spectrum(k, size, policy)


def synthesize(spectrum: CirculantSpectrum, z: np.ndarray) -> np.ndarray:
    """
    Re( sum_pq sqrt(lambda_pq)/(2S) z_pq exp(+2 pi i (pi + qj)/2S) ) on the full torus.

    numpy's ifft2 carries a 1/N^2 prefactor (N = 2S), so the sum is N * ifft2.
    """
    N = spectrum.torus_size
    return (N * np.fft.ifft2(np.sqrt(spectrum.lambdas) * z)).real


class NoiseSampler:
    """
    Draws Gaussian fields with covariance K on an S x S grid.

    Holds mutable generator state, so use one sampler per worker.
    """

    def __init__(self, spectrum: CirculantSpectrum, rng: np.random.Generator | int):
        self.spectrum = spectrum
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.grid = GridSpec(size=spectrum.size) if spectrum.size >= 2 else None

    def draw_coefficients(self) -> np.ndarray:
        N = self.spectrum.torus_size
        real = self.rng.standard_normal((N, N))
        imag = self.rng.standard_normal((N, N))
        return real + 1j * imag

    def sample_values(self, z: np.ndarray | None = None) -> np.ndarray:
        """One S x S noise array; pass z to replace the random coefficients."""
        if z is None:
            z = self.draw_coefficients()
        S = self.spectrum.size
        return synthesize(self.spectrum, z)[:S, :S]

    def sample_field(self, z: np.ndarray | None = None) -> GridField:
        return GridField(spec=self.grid, values=self.sample_values(z))


def sample_field(s: NoiseSampler) -> GridField:
    return s.sample_field()


def periodized_variance(k: StationaryKernel, terms: int = 3) -> float:
    """K_per(0, 0) = sum over (p, q) of K(2p, 2q), truncated to |p|, |q| <= terms."""
    idx = np.arange(-terms, terms + 1) * PERIOD
    return float(k(idx[:, None], idx[None, :]).sum())
