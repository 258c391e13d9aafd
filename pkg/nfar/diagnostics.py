# nfar/diagnostics.py
"""
Numerical audit of the exponential-ergodicity conditions.

Everything here works on the quadrature discretization of the covariance
operator Q at grid resolution S. Results are numerical evidence at that
resolution, never a proof about the infinite-dimensional operator.
"""

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg, stats

from .dynamics import NfarModel, NfarPath, simulate_path
from .errors import GridTooLargeError
from .gp_sampler import EmbeddingPolicy, NoiseSampler, StationaryKernel, cached_spectrum
from .grid import GridSpec

MAX_DENSE_GRID = 40
EIGEN_FLOOR = 1e-12
ACF_THRESHOLD = 0.02
EVIDENCE_LABEL = "numerical evidence at grid resolution S={S}"


class CovarianceOperatorDisc(BaseModel):
    """
    Q discretized by quadrature: matrix[a, b] = K(u_a - u_b) / S^2 over flattened grid points.

    `eigvecs` columns are orthonormal in the quadrature inner product
    <f, g> = sum f g / S^2, i.e. S times the Euclidean eigenvectors.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: GridSpec
    matrix: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    trace: float

    @property
    def operator_norm(self) -> float:
        """||Q||_L = lambda_1."""
        return float(self.eigvals[0])

    @property
    def trace_norm(self) -> float:
        """||Q||_T = sum of eigenvalues (Q is positive)."""
        return float(self.trace)

    def positive_count(self, floor: float = EIGEN_FLOOR) -> int:
        """Eigenvalues above `floor`; all S^2 of them means Ker(Q) = {0} on the grid."""
        return int(np.sum(self.eigvals > floor))

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(Qf)(u_a) = sum_b K(u_a, u_b) f(u_b) / S^2 on flattened values."""
        return self.matrix @ f


def discretize_covariance(k: StationaryKernel, grid: GridSpec) -> CovarianceOperatorDisc:
    S = grid.size
    if S > MAX_DENSE_GRID:
        raise GridTooLargeError(f"Dense covariance needs S <= {MAX_DENSE_GRID}; got S={S} ({S * S} x {S * S} matrix).")
    u1, u2 = grid.mesh()
    u1, u2 = u1.ravel(), u2.ravel()
    matrix = k(u1[:, None] - u1[None, :], u2[:, None] - u2[None, :]) * grid.weight
    matrix = 0.5 * (matrix + matrix.T)

    w, v = linalg.eigh(matrix, driver='evd')
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order] * S
    return CovarianceOperatorDisc(grid=grid, matrix=matrix, eigvals=w, eigvecs=v,
                                  trace=float(np.trace(matrix)))


def power_iteration(matrix: np.ndarray, tol: float = 1e-14, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest eigenvalue of a positive semi-definite matrix."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(matrix.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matrix @ x
        new_lam = float(x @ y)
        x = y / np.linalg.norm(y)
        if abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            return new_lam
        lam = new_lam
    return lam


# --- Drift condition on m_0 ---

class DriftReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    c1: float
    c2: float
    rho: float
    kappa: float
    tau_sup: float
    tau_growth: Literal['bounded', 'linear', 'superlinear']
    lambda_max: float
    trace: float
    positive_eigenvalues: int
    grid_points: int
    condition_pass: bool
    label: str
    empirical_mean_norm: float | None = None
    bound_satisfied: bool | None = None


def _tau_growth(m: NfarModel, half_width: float = 20.0, h: float = 1e-3):
    """
    Grid search of |tau| on [-half_width, half_width].

    Returns (kind, sup, slope, intercept) with |tau(x)| <= slope |x| + intercept
    on the searched range.
    """
    x = np.arange(-half_width, half_width + h / 2, h)
    a = np.abs(m.tau(x))
    inner = np.abs(x) <= half_width / 2
    inner_max = float(a[inner].max())
    outer_max = float(a.max())
    if outer_max <= inner_max * (1 + 1e-4) + 1e-12:
        return 'bounded', outer_max, 0.0, outer_max

    far = np.abs(x) >= half_width / 2
    slope_outer = float(np.max(a[far] / np.abs(x[far])))
    mid = (np.abs(x) >= half_width / 4) & inner
    slope_inner = float(np.max(a[mid] / np.abs(x[mid])))
    if slope_outer > slope_inner * (1 + 1e-6):
        return 'superlinear', math.inf, slope_outer, math.inf
    slope = max(slope_outer, slope_inner)
    intercept = max(float(np.max(a - slope * np.abs(x))), 0.0)
    return 'linear', math.inf, slope, intercept


def check_assumption_m2(m: NfarModel, q: CovarianceOperatorDisc) -> DriftReport:
    """
    ||m_0(x)||_H <= c1 ||x||_H + c2 with m_0(x) = amplitude * tau(x(.)).

    rho = c1 ||Q||_L must be < 1; kappa = c2 ||Q||_L + sqrt(||Q||_T) is the
    drift constant of the Lyapunov bound.
    """
    kind, sup, slope, intercept = _tau_growth(m)
    if kind == 'bounded':
        tau_sup = min(sup, m.tau_bound) if math.isfinite(m.tau_bound) else sup
        c1, c2 = 0.0, abs(m.amplitude) * tau_sup
    elif kind == 'linear':
        tau_sup = math.inf
        c1, c2 = abs(m.amplitude) * slope, abs(m.amplitude) * intercept
    else:
        tau_sup = math.inf
        c1, c2 = math.inf, math.inf

    lam1 = q.operator_norm
    rho = c1 * lam1
    kappa = c2 * lam1 + math.sqrt(q.trace_norm)
    S = q.grid.size
    if kind == 'superlinear':
        print("WARNING: tau grows faster than linearly on the searched range; drift condition fails.")
    return DriftReport(
        c1=c1, c2=c2, rho=rho, kappa=kappa, tau_sup=tau_sup, tau_growth=kind,
        lambda_max=lam1, trace=q.trace_norm, positive_eigenvalues=q.positive_count(),
        grid_points=S * S, condition_pass=bool(rho < 1),
        label=EVIDENCE_LABEL.format(S=S),
    )


# --- Hammerstein smoothness condition ---

class ExampleCondReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    partial_sums: list[float]
    terms_used: int
    diverging: bool
    off_diagonal_energy: float
    diagonal_energy: float
    tau_sup_sq: float
    example_condition_pass: bool
    direct_factorization: bool
    notes: list[str] = Field(default_factory=list)
    label: str


def amplitude_kernel_matrix(m: NfarModel, grid: GridSpec) -> np.ndarray:
    """f(u_a, u_b) = amplitude * K(u_a - u_b) over flattened grid points."""
    u1, u2 = grid.mesh()
    u1, u2 = u1.ravel(), u2.ravel()
    return m.amplitude * m.kernel(u1[:, None] - u1[None, :], u2[:, None] - u2[None, :])


def _looks_divergent(s: np.ndarray) -> bool:
    if s.size < 4:
        return False
    inc = np.diff(np.concatenate([[0.0], s]))
    quarter = max(1, inc.size // 4)
    head = float(np.mean(inc[:quarter]))
    tail = float(np.mean(inc[-quarter:]))
    return head > 0 and tail > 0.5 * head


def check_example_condition(m: NfarModel, q: CovarianceOperatorDisc, m_terms: int,
                            f_matrix: np.ndarray | None = None) -> ExampleCondReport:
    """
    Partial sums s_m = sum_{i,j <= m} f_ij^2 / lambda_i^2 of the Hammerstein smoothness condition.

    f_ij = int int f(u, v) e_i(u) e_j(v) du dv is computed by quadrature.
    `f_matrix` defaults to amplitude * K, the experiment's kernel.
    """
    S = q.grid.size
    if m_terms > S * S:
        raise ValueError(f"m_terms={m_terms} exceeds the {S * S} available eigenpairs.")
    F = amplitude_kernel_matrix(m, q.grid) if f_matrix is None else np.asarray(f_matrix, dtype=np.float64)

    notes = []
    lam = q.eigvals[:m_terms]
    usable = int(np.sum(lam >= EIGEN_FLOOR))
    if usable < m_terms:
        print(f"WARNING: Eigenvalue {usable + 1} is below {EIGEN_FLOOR:g}; truncating the sum at {usable} terms.")
        notes.append(f"sum truncated at {usable} terms (eigenvalue below {EIGEN_FLOOR:g})")

    E = q.eigvecs[:, :usable]
    w = q.grid.weight
    coeffs = (E.T @ F @ E) * (w * w)
    sq = coeffs ** 2
    ratio = sq / (lam[:usable, None] ** 2)
    partial = np.array([ratio[:n, :n].sum() for n in range(1, usable + 1)])

    diag = float(np.sum(np.diag(sq)))
    off = float(np.sum(sq) - diag)
    diverging = _looks_divergent(partial)
    tau_sup = m.tau_bound if math.isfinite(m.tau_bound) else math.inf

    is_hammerstein_default = f_matrix is None
    if is_hammerstein_default:
        notes.append("f = amplitude * k gives f_ij = amplitude * lambda_i * delta_ij, so s_m grows like amplitude^2 * m "
                     "and the smoothness condition fails.")
        notes.append("Psi_0 = Q o m_0 still holds directly with m_0(x) = amplitude * tau(x(.)).")
    return ExampleCondReport(
        partial_sums=partial.tolist(), terms_used=usable, diverging=diverging,
        off_diagonal_energy=off, diagonal_energy=diag,
        tau_sup_sq=tau_sup ** 2, example_condition_pass=not diverging,
        direct_factorization=is_hammerstein_default,
        notes=notes, label=EVIDENCE_LABEL.format(S=S),
    )


# --- Empirical checks on simulated paths ---

class DriftTestResult(BaseModel):
    passed: bool
    valid_rho: bool
    mean_increment: float
    stderr: float
    margin: float
    empirical_mean_norm: float


def path_norms(path: NfarPath) -> np.ndarray:
    """||Z_t||_H for every t by quadrature."""
    flat = path.frames.reshape(len(path), -1)
    return np.sqrt((flat ** 2) @ np.full(flat.shape[1], path.grid.weight))


def empirical_drift_test(path: NfarPath, report: DriftReport, n_se: float = 3.0) -> DriftTestResult:
    """
    mean_t (||X_{t+1}|| - rho ||X_t||) <= kappa + 3 stderr.

    A rho >= 1 makes the inequality vacuous; the result is then flagged
    invalid regardless of the comparison.
    """
    if len(path) < 500:
        raise ValueError(f"Drift test needs a path of at least 500 fields, got {len(path)}.")
    norms = path_norms(path)
    d = norms[1:] - report.rho * norms[:-1]
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(d.size))
    margin = report.kappa + n_se * se - mean
    valid = report.rho < 1
    if not valid:
        print(f"WARNING: rho = {report.rho:.3g} >= 1; drift inequality is vacuous.")
    return DriftTestResult(passed=bool(margin >= 0), valid_rho=valid, mean_increment=mean,
                           stderr=se, margin=margin, empirical_mean_norm=float(norms.mean()))


class MixingDecayReport(BaseModel):
    status: Literal['fitted', 'too_fast', 'degenerate']
    decay_rate: float | None = None
    r2: float | None = None
    autocorrelations: list[float] = Field(default_factory=list)
    lags_used: int = 0


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation rho(0..max_lag) with the usual 1/n normalization."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / n
    if gamma0 <= 0:
        return np.full(max_lag + 1, np.nan)
    return np.array([float(xc[:n - j] @ xc[j:]) / n / gamma0 for j in range(max_lag + 1)])


def mixing_decay_estimate(path: NfarPath, max_lag: int) -> MixingDecayReport:
    """
    Exponential fit of the autocorrelation of the spatial mean of Z_t.

    A proxy for the decay of dependence, not an estimate of beta(j).
    """
    if len(path) < 20 * max_lag:
        raise ValueError(f"Need at least {20 * max_lag} fields for max_lag={max_lag}, got {len(path)}.")
    phi = path.frames.reshape(len(path), -1).mean(axis=1)
    acf = autocorrelation(phi, max_lag)
    if np.isnan(acf[0]) or np.ptp(phi) <= 1e-14 * max(1.0, float(np.abs(phi).max())):
        return MixingDecayReport(status='degenerate')

    lags = np.arange(1, max_lag + 1)
    keep = np.abs(acf[1:]) > ACF_THRESHOLD
    if keep.sum() < 2:
        return MixingDecayReport(status='too_fast', autocorrelations=acf.tolist(), lags_used=int(keep.sum()))
    fit = stats.linregress(lags[keep], np.log(np.abs(acf[1:][keep])))
    return MixingDecayReport(status='fitted', decay_rate=float(-fit.slope), r2=float(fit.rvalue ** 2),
                             autocorrelations=acf.tolist(), lags_used=int(keep.sum()))


# --- Combined audit ---

def run_condition_checks(m: NfarModel, length: int = 2000, seed: int = 0, burn_in: int = 500,
                         m_terms: int = 50, max_lag: int = 20, policy: EmbeddingPolicy = 'clamp') -> dict:
    """
    Every condition check for model `m` at its grid resolution, as one JSON-ready dict.

    The empirical drift test and the mixing fit run on a simulated path and
    are skipped (reported as None) when `length` is too short for them.
    """
    q = discretize_covariance(m.kernel, m.grid)
    drift = check_assumption_m2(m, q)
    example = check_example_condition(m, q, min(m_terms, m.grid.size ** 2))

    sampler = NoiseSampler(cached_spectrum(m.kernel, m.grid.size, policy), seed)
    path = simulate_path(m, sampler, length, burn_in=burn_in, seed=seed)
    drift_test = empirical_drift_test(path, drift) if length >= 500 else None
    if drift_test is not None:
        drift = drift.model_copy(update={'empirical_mean_norm': drift_test.empirical_mean_norm,
                                         'bound_satisfied': drift_test.empirical_mean_norm <= drift.kappa / (1 - drift.rho)
                                         if drift.rho < 1 else None})
    mixing = mixing_decay_estimate(path, max_lag) if length >= 20 * max_lag else None

    return {
        'trace': q.trace,
        'lambda_max': q.operator_norm,
        'rho': drift.rho,
        'kappa': drift.kappa,
        'partial_sums': example.partial_sums,
        'drift_pass': drift.condition_pass and (drift_test.passed if drift_test is not None else True),
        'decay_rate': mixing.decay_rate if mixing is not None else None,
        'r2': mixing.r2 if mixing is not None else None,
        'drift': drift.model_dump(mode='json'),
        'example_condition': example.model_dump(mode='json'),
        'drift_test': drift_test.model_dump(mode='json') if drift_test is not None else None,
        'mixing': mixing.model_dump(mode='json') if mixing is not None else None,
    }
