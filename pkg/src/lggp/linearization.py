"""Monte Carlo iterated posterior linearization for the latent fields.

The stacked latent vector ``x = (alpha, beta)`` gets a Gaussian approximation
``N(m, P)``. Each iteration fits a statistical linear regression
``y ~ A x + b + e, e ~ N(0, Lambda)`` with respect to the current
approximation and then conditions the prior moments ``(m0, P0)`` on the data
through that affine model.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .exceptions import InvalidInputError, NumericalFailureError
from .gp_core import KernelParams, add_noise_diag, as_grid, chol_factor, se_covariance

MAX_PRIOR_RETRIES = 100


@dataclass
class TraceEntry:
    t: int
    m: np.ndarray
    P_diag: np.ndarray
    jitter: float
    step: float


@dataclass
class MomentState:
    """Gaussian moments over ``(alpha, beta)`` stacked alpha first."""

    m: np.ndarray
    P: np.ndarray
    t: int = 0
    jitter: float = 0.0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        n = self.m.size
        if self.m.shape != (n,) or self.P.shape != (n, n):
            raise InvalidInputError("m must be a vector and P a matching square matrix")

    @property
    def K(self):
        return self.m.size // 2


@dataclass
class SlrParams:
    A: np.ndarray
    b: np.ndarray
    Lam: np.ndarray
    clamped: float = 0.0


@dataclass
class Ensemble:
    """Latent and data draws, one column per member."""

    alpha: np.ndarray
    beta: np.ndarray
    y: np.ndarray

    @property
    def J(self):
        return self.y.shape[1]

    @property
    def latent(self):
        return np.vstack([self.alpha, self.beta])


def _sym(M):
    return 0.5 * (M + M.T)


def sample_gamma(alpha, beta, rng):
    """Gamma draws with shape ``exp(alpha)`` and rate ``exp(beta)``.

    Draws that underflow to zero are raised to the smallest normal float so
    that every observation stays strictly positive.
    """
    y = rng.gamma(np.exp(alpha), np.exp(-beta))
    return np.maximum(y, np.finfo(float).tiny)


def sample_hypers(prior, D, size, rng):
    """Draw ``size`` hyperparameter sets from one process's prior.

    Returns ``(mu, noise_std, signal_std, length_scales)`` arrays; length
    scales have shape (size, D). With the bound disabled the length-scale
    normal is restricted to positive values.
    """
    mu = rng.normal(prior.gamma_mu, prior.rho_mu, size)
    sig_e = np.abs(rng.normal(0.0, prior.rho_noise, size))
    sig_s = np.abs(rng.normal(0.0, prior.rho_signal, size))
    lower = max(prior.bound, 0.0)
    a = (lower - prior.gamma_l) / prior.rho_l
    ls = stats.truncnorm.rvs(
        a, np.inf, loc=prior.gamma_l, scale=prior.rho_l, size=(size, D), random_state=rng
    )
    return mu, sig_e, sig_s, ls


def _gp_draw(grid, mu, sig_e, sig_s, ls, rng):
    params = KernelParams(mu, sig_e, sig_s, ls)
    cov = add_noise_diag(se_covariance(grid, grid, params), sig_e)
    factor = chol_factor(cov)
    return mu + factor.lower @ rng.standard_normal(grid.shape[0]), factor.jitter


def init_prior_moments(spec, grid, J, rng):
    """Prior moments and the prior ensemble.

    ``m0`` holds the prior means of the GP mean parameters. ``P0`` is the
    Monte Carlo second moment about ``m0`` (divisor J) of latent fields
    drawn from hyperparameters drawn from their priors. Draws whose
    covariance cannot be factorized are redrawn.

    Raises
    ------
    NumericalFailureError
        If more than ``MAX_PRIOR_RETRIES`` draws of a member fail.
    """
    if J < 2:
        raise InvalidInputError("ensemble size J must be at least 2")
    grid = as_grid(grid)
    K, D = grid.shape
    latent = np.empty((2, K, J))
    jitter = 0.0
    for p, prior in enumerate((spec.alpha, spec.beta)):
        mu, sig_e, sig_s, ls = sample_hypers(prior, D, J, rng)
        for j in range(J):
            for _ in range(MAX_PRIOR_RETRIES):
                try:
                    draw, jit = _gp_draw(grid, mu[j], sig_e[j], sig_s[j], ls[j], rng)
                    break
                except (NumericalFailureError, InvalidInputError):
                    mu[j], sig_e[j], sig_s[j], ls[j] = (
                        v[0] for v in sample_hypers(prior, D, 1, rng)
                    )
            else:
                raise NumericalFailureError(
                    f"prior draw {j} failed {MAX_PRIOR_RETRIES} times"
                )
            latent[p, :, j] = draw
            jitter = max(jitter, jit)
    m0 = np.concatenate([np.full(K, spec.alpha.gamma_mu), np.full(K, spec.beta.gamma_mu)])
    X = np.vstack([latent[0], latent[1]]) - m0[:, None]
    P0 = _sym(X @ X.T / J)
    y = sample_gamma(latent[0], latent[1], rng)
    ens = Ensemble(latent[0], latent[1], y)
    return MomentState(m0, P0, 0, jitter), ens


def simulate_ensemble(moments, J, rng):
    """J joint draws from ``N(m, P)`` and one data draw per member."""
    factor = chol_factor(_sym(moments.P))
    X = moments.m[:, None] + factor.lower @ rng.standard_normal((moments.m.size, J))
    K = moments.K
    alpha, beta = X[:K], X[K:]
    return Ensemble(alpha, beta, sample_gamma(alpha, beta, rng))


def mc_moment_estimates(ens, m_prev):
    """Predicted data mean, data covariance and latent-data cross-covariance.

    Averages use divisor J; latent deviations are taken about ``m_prev``.
    """
    J = ens.J
    if J < 2:
        raise InvalidInputError("ensemble size J must be at least 2")
    mu_plus = ens.y.mean(axis=1)
    Ydev = ens.y - mu_plus[:, None]
    Xdev = ens.latent - np.asarray(m_prev, dtype=float)[:, None]
    P_yy = _sym(Ydev @ Ydev.T / J)
    P_xy = Xdev @ Ydev.T / J
    return mu_plus, P_yy, P_xy


def slr_from_moments(estimates, moments_prev):
    """Statistical linear regression parameters w.r.t. ``N(m, P)``.

    Negative eigenvalues of Lambda (Monte Carlo artefacts) are clipped to
    zero; the largest clipped magnitude is stored in ``clamped``.
    """
    mu_plus, P_yy, P_xy = estimates
    factor = chol_factor(_sym(moments_prev.P))
    A = factor.solve(P_xy).T
    b = mu_plus - A @ moments_prev.m
    Lam = _sym(P_yy - A @ moments_prev.P @ A.T)
    evals, evecs = linalg.eigh(Lam)
    clamped = float(max(0.0, -evals.min())) if evals.size else 0.0
    if clamped > 0.0:
        Lam = _sym((evecs * np.maximum(evals, 0.0)) @ evecs.T)
    return SlrParams(A, b, Lam, clamped)


def pl_update(prior, slr, y):
    """Condition the prior moments on ``y`` through the affine model."""
    A = slr.A
    mu = A @ prior.m + slr.b
    PAt = prior.P @ A.T
    S = _sym(A @ PAt + slr.Lam)
    factor = chol_factor(S)
    gain = factor.solve(PAt.T).T
    m = prior.m + gain @ (np.asarray(y, dtype=float) - mu)
    P = _sym(prior.P - gain @ S @ gain.T)
    return MomentState(m, P, jitter=factor.jitter)


class MonteCarloMoments:
    """Default moment backend: fresh ensembles from the current approximation.

    The first call reuses the prior ensemble.
    """

    def __init__(self, J, initial_ensemble=None):
        self.J = J
        self._pending = initial_ensemble

    def __call__(self, moments, rng):
        if self._pending is not None:
            ens, self._pending = self._pending, None
        else:
            ens = simulate_ensemble(moments, self.J, rng)
        return mc_moment_estimates(ens, moments.m)


def iterate_pl(spec, dataset, J, T, rng, moment_backend=None, tol=1e-3, prior_moments=None):
    """Run T rounds of posterior linearization.

    Parameters
    ----------
    moment_backend : callable, optional
        ``backend(moments, rng) -> (mu_plus, P_yy, P_xy)``. Defaults to
        Monte Carlo with ensemble size J, starting from the prior ensemble.
    tol : float or None
        Stop early once the largest change of ``m`` falls below ``tol``.
    prior_moments : MomentState, optional
        Replaces the Monte Carlo prior moments (used with exact backends).

    Returns
    -------
    MomentState
        Final moments; ``trace`` holds one :class:`TraceEntry` per round.
    """
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    if prior_moments is None:
        prior_moments, ens0 = init_prior_moments(spec, dataset.grid, J, rng)
    else:
        ens0 = None
    if moment_backend is None:
        moment_backend = MonteCarloMoments(J, ens0)
    trace = [TraceEntry(0, prior_moments.m.copy(), np.diag(prior_moments.P).copy(),
                        prior_moments.jitter, np.nan)]
    current = prior_moments
    for t in range(1, T + 1):
        estimates = moment_backend(current, rng)
        slr = slr_from_moments(estimates, current)
        nxt = pl_update(prior_moments, slr, dataset.y)
        nxt.t = t
        step = float(np.max(np.abs(nxt.m - current.m)))
        trace.append(TraceEntry(t, nxt.m.copy(), np.diag(nxt.P).copy(), nxt.jitter, step))
        current = nxt
        if tol is not None and step < tol:
            break
    current.trace = trace
    return current


def split_blocks(moments):
    """Return ``(m_alpha, m_beta, P_alpha, P_beta, P_alpha_beta)``."""
    n = moments.m.size
    if n % 2:
        raise InvalidInputError("moment state must have even length")
    K = n // 2
    P = moments.P
    return (
        moments.m[:K].copy(),
        moments.m[K:].copy(),
        _sym(P[:K, :K]),
        _sym(P[K:, K:]),
        P[:K, K:].copy(),
    )


def write_trace(trace, path):
    """Dump a PL trace as CSV: one row per round with m and diag(P)."""
    n = trace[0].m.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "jitter", "step"]
            + [f"m_{i}" for i in range(n)]
            + [f"P_{i}{i}" for i in range(n)]
        )
        for e in trace:
            writer.writerow(
                [e.t, repr(e.jitter), repr(e.step)]
                + [repr(float(v)) for v in e.m]
                + [repr(float(v)) for v in e.P_diag]
            )
