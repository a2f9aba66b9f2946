"""Squared-exponential Gaussian process primitives.

All solves go through a Cholesky factor. Covariances are built with the
per-dimension product form of the squared-exponential kernel.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError, NumericalFailureError

LOG_2PI = float(np.log(2.0 * np.pi))

#: Relative jitter levels tried in order, as multiples of mean(diag(cov)).
JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of one squared-exponential GP.

    Parameters
    ----------
    mean : float
        Constant prior mean.
    noise_std : float
        Standard deviation of the independent (nugget) term.
    signal_std : float
        Signal standard deviation.
    length_scales : array_like
        One length scale per input dimension.
    """

    mean: float
    noise_std: float
    signal_std: float
    length_scales: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        values = np.concatenate([[self.noise_std, self.signal_std], ls])
        if not np.all(np.isfinite(values)) or not np.isfinite(self.mean):
            raise InvalidInputError("kernel parameters must be finite")
        if self.noise_std < 0 or self.signal_std <= 0 or np.any(ls <= 0):
            raise InvalidInputError(
                "noise_std must be >= 0, signal_std and length scales > 0"
            )

    @property
    def dim(self):
        return self.length_scales.size


def as_grid(points):
    """Return ``points`` as a finite (K, D) float array."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInputError(f"grid must be 1-D or 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("grid coordinates must be finite")
    return x


def se_covariance(grid_a, grid_b, params):
    """Squared-exponential cross-covariance between two grids.

    No noise term is added. Entry ``(i, j)`` equals
    ``signal_std**2 * prod_d exp(-(a_id - b_jd)**2 / (2 l_d**2))``.
    """
    a = as_grid(grid_a)
    b = as_grid(grid_b)
    if a.shape[1] != b.shape[1] or a.shape[1] != params.dim:
        raise InvalidInputError(
            f"dimension mismatch: {a.shape[1]}, {b.shape[1]}, {params.dim}"
        )
    cov = np.full((a.shape[0], b.shape[0]), float(params.signal_std) ** 2)
    for d in range(a.shape[1]):
        diff = a[:, d, None] - b[None, :, d]
        cov *= np.exp(-0.5 * diff**2 / params.length_scales[d] ** 2)
    return cov


def distance_table(grid, rel_tol=1e-12):
    """Distinct per-dimension squared distances of a grid.

    Returns ``(d2u, idx, toeplitz)`` where ``d2u`` has shape (D, U), the
    flat index ``idx`` (length K*K) maps every pair to its column of
    ``d2u``, and ``toeplitz`` is True when every stationary covariance on
    the grid is a Toeplitz matrix (uniform, sorted 1-D grids). Pairs whose
    squared distances agree to ``rel_tol`` of the largest one share a
    column, so a uniform 1-D grid needs only K columns.
    """
    x = as_grid(grid)
    K, D = x.shape
    d2 = np.stack([(x[:, d, None] - x[None, :, d]) ** 2 for d in range(D)])
    flat = d2.reshape(D, K * K)
    scale = np.maximum(flat.max(axis=1, keepdims=True), np.finfo(float).tiny)
    keys = np.round(flat / scale / rel_tol).astype(np.int64)
    _, first, idx = np.unique(keys, axis=1, return_index=True, return_inverse=True)
    d2u = np.ascontiguousarray(flat[:, first])
    idx = np.ascontiguousarray(idx.ravel().astype(np.int64))
    lag = np.abs(np.arange(K)[:, None] - np.arange(K)[None, :])
    toeplitz = bool(D == 1 and np.array_equal(idx, idx[lag.ravel()]))
    return d2u, idx, toeplitz


def add_noise_diag(cov, noise_std):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got {cov.shape}")
    if noise_std < 0:
        raise InvalidInputError("noise_std must be non-negative")
    out = cov.copy()
    out[np.diag_indices_from(out)] += noise_std**2
    return out


@dataclass(frozen=True)
class CholFactor:
    """Covariance matrix together with its lower Cholesky factor.

    ``lower @ lower.T == matrix + jitter * I``.
    """

    matrix: np.ndarray
    lower: np.ndarray
    jitter: float

    def solve(self, rhs):
        return linalg.cho_solve((self.lower, True), rhs, check_finite=False)

    def half_solve(self, rhs):
        """Return ``L^{-1} rhs``."""
        return linalg.solve_triangular(self.lower, rhs, lower=True, check_finite=False)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def chol_factor(cov, schedule=JITTER_SCHEDULE):
    """Cholesky factorization with an escalating diagonal jitter.

    The jitter levels in ``schedule`` are relative to ``mean(diag(cov))``;
    the first level for which the factorization succeeds is recorded.

    Raises
    ------
    NumericalFailureError
        If every level fails; carries the minimum eigenvalue of ``cov``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got {cov.shape}")
    if cov.shape[0] == 0:
        return CholFactor(cov, np.zeros((0, 0)), 0.0)
    if not np.all(np.isfinite(cov)):
        raise NumericalFailureError("covariance contains non-finite entries")
    scale = float(np.mean(np.diag(cov)))
    if scale <= 0:
        scale = 1.0
    for level in schedule:
        jitter = level * scale
        mat = cov if jitter == 0 else cov + jitter * np.eye(cov.shape[0])
        try:
            lower = linalg.cholesky(mat, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.diag(lower) > 0) and np.all(np.isfinite(lower)):
            return CholFactor(cov, lower, jitter)
    min_eig = float(np.linalg.eigvalsh(0.5 * (cov + cov.T))[0])
    raise NumericalFailureError(
        f"Cholesky failed for all jitter levels (min eigenvalue {min_eig:.3e})",
        min_eigenvalue=min_eig,
    )


def _factor(cov):
    return cov if isinstance(cov, CholFactor) else chol_factor(cov)


def gaussian_logpdf(x, mean, cov):
    """Multivariate normal log-density evaluated through a Cholesky factor."""
    factor = _factor(cov)
    resid = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(mean, dtype=float))
    k = factor.lower.shape[0]
    if resid.shape != (k,):
        raise InvalidInputError(f"expected length {k} vector, got {resid.shape}")
    z = factor.half_solve(resid)
    return float(-0.5 * k * LOG_2PI - 0.5 * factor.logdet() - 0.5 * z @ z)


def gp_predict(train_grid, test_grid, latent_values, params):
    """Predictive mean and covariance of a GP at ``test_grid``.

    Conditions on noisy latent values at ``train_grid``; the predictive
    covariance excludes the nugget and has its diagonal clamped at zero.
    """
    x = as_grid(train_grid)
    xs = np.asarray(test_grid, dtype=float)
    if xs.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    xs = as_grid(xs)
    v = np.asarray(latent_values, dtype=float)
    if v.shape != (x.shape[0],):
        raise InvalidInputError("latent_values length must match the train grid")
    factor = chol_factor(add_noise_diag(se_covariance(x, x, params), params.noise_std))
    cross = se_covariance(xs, x, params)
    mean = cross @ factor.solve(v - params.mean) + params.mean
    half = factor.half_solve(cross.T)
    cov = se_covariance(xs, xs, params) - half.T @ half
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(diag, 0.0))
    return mean, cov
