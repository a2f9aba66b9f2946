"""Log-Gaussian gamma process model.

Observations are gamma distributed, ``y_k ~ Gamma(shape=exp(alpha_k),
rate=exp(beta_k))``, and the log-shape and log-rate fields carry independent
squared-exponential GP priors with constant means. Hyperparameters get a
normal prior on the mean, half-normal priors on both standard deviations and
lower-truncated normal priors on the length scales.

Two evaluation paths exist. The functions taking a :class:`LatentState` and
:class:`~lggp.gp_core.KernelParams` work in constrained space on top of
:mod:`lggp.gp_core`; the packed-vector functions work in unconstrained space
(Jacobian included) through the compiled kernels used by the sampler. Tests
check one against the other.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special, stats

from . import _model_kernels as kern
from .exceptions import InvalidInputError
from .gp_core import (
    KernelParams,
    add_noise_diag,
    as_grid,
    distance_table,
    gaussian_logpdf,
    se_covariance,
)
from .sampler import TargetFn

PRIOR_FIELDS = ("gamma_mu", "rho_mu", "rho_noise", "rho_signal", "gamma_l", "rho_l", "bound")


@dataclass(frozen=True)
class Dataset:
    """Observations ``y`` at the rows of ``grid``."""

    grid: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        grid = as_grid(self.grid)
        y = np.asarray(self.y, dtype=float).ravel()
        if y.shape[0] != grid.shape[0]:
            raise InvalidInputError(
                f"y has {y.shape[0]} entries but the grid has {grid.shape[0]} rows"
            )
        if grid.shape[0] < 1:
            raise InvalidInputError("dataset must contain at least one observation")
        bad = np.flatnonzero(~(np.isfinite(y) & (y > 0)))
        if bad.size:
            raise InvalidInputError(
                f"observations must be positive and finite (first bad index {bad[0]})"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "y", y)

    @property
    def K(self):
        return self.grid.shape[0]

    @property
    def D(self):
        return self.grid.shape[1]

    @cached_property
    def geometry(self):
        return distance_table(self.grid)

    @cached_property
    def log_y(self):
        return np.log(self.y)


@dataclass(frozen=True)
class LatentState:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        b = np.asarray(self.beta, dtype=float).ravel()
        if a.shape != b.shape:
            raise InvalidInputError("alpha and beta must have equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("latent values must be finite")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class ProcessPrior:
    """Hyperprior of one latent process.

    ``bound`` is the lower truncation point of the length-scale prior; a
    value of zero disables the truncation.
    """

    gamma_mu: float
    rho_mu: float
    rho_noise: float
    rho_signal: float
    gamma_l: float
    rho_l: float
    bound: float = 0.0

    def __post_init__(self):
        vals = np.array([getattr(self, f) for f in PRIOR_FIELDS], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("prior parameters must be finite")
        if min(self.rho_mu, self.rho_noise, self.rho_signal, self.rho_l) <= 0:
            raise InvalidInputError("prior scales must be positive")
        if self.bound < 0:
            raise InvalidInputError("length-scale bound must be non-negative")

    def as_row(self):
        return np.array([getattr(self, f) for f in PRIOR_FIELDS], dtype=float)


@dataclass(frozen=True)
class HyperPriorSpec:
    alpha: ProcessPrior
    beta: ProcessPrior

    def as_array(self):
        """(2, 7) array of prior rows, the layout used by the kernels."""
        return np.vstack([self.alpha.as_row(), self.beta.as_row()])

    @classmethod
    def from_table(cls, values):
        """Build from the 14-value row order used in the dataset presets.

        Order: gamma_mu_a, rho_mu_a, gamma_mu_b, rho_mu_b, rho_e_a, rho_e_b,
        rho_s_a, rho_s_b, gamma_l_a, rho_l_a, B_a, gamma_l_b, rho_l_b, B_b.
        """
        v = [float(x) for x in values]
        if len(v) != 14:
            raise InvalidInputError("expected 14 prior values")
        return cls(
            alpha=ProcessPrior(v[0], v[1], v[4], v[6], v[8], v[9], v[10]),
            beta=ProcessPrior(v[2], v[3], v[5], v[7], v[11], v[12], v[13]),
        )


PRESETS = {
    "synthetic": HyperPriorSpec.from_table(
        [2, 1, 1, 0.5, 0.001, 0.001, 0.5, 0.5, 0.1, 0.2, 0.01, 0.5, 0.2, 0.25]
    ),
    "youngs_modulus": HyperPriorSpec.from_table(
        [4, 1, 4, 1, 0.001, 0.001, 0.5, 0.5, 0.5, 0.2, 0.01, 0.5, 0.2, 0.25]
    ),
    "argentopyrite": HyperPriorSpec.from_table(
        [1, 0.5, 3, 0.5, 0.001, 0.001, 0.5, 0.5, 0.1, 0.1, 0.001, 0.5, 0.2, 0.025]
    ),
}


# ---------------------------------------------------------------- transforms


def n_hyper(D):
    return D + 3


def n_params(K, D):
    return 2 * K + 2 * n_hyper(D)


def param_names(K, D):
    names = [f"alpha[{k}]" for k in range(K)] + [f"beta[{k}]" for k in range(K)]
    for p in ("alpha", "beta"):
        names += [f"mu_{p}", f"log_sigma_e_{p}", f"log_sigma_s_{p}"]
        names += [f"log_l_{p}[{d}]" for d in range(D)]
    return names


def to_unconstrained(params, bound=0.0):
    """Map ``KernelParams`` to the unconstrained hyper block.

    Raises
    ------
    InvalidInputError
        If a length scale does not exceed a positive ``bound``.
    """
    if params.noise_std <= 0:
        raise InvalidInputError("noise_std must be positive for the log transform")
    shift = params.length_scales - max(bound, 0.0)
    if np.any(shift <= 0):
        raise InvalidInputError("length scales must exceed the prior bound")
    return np.concatenate(
        [[params.mean, np.log(params.noise_std), np.log(params.signal_std)], np.log(shift)]
    )


def to_constrained(h, bound=0.0):
    h = np.asarray(h, dtype=float)
    return KernelParams(
        mean=float(h[0]),
        noise_std=float(np.exp(h[1])),
        signal_std=float(np.exp(h[2])),
        length_scales=max(bound, 0.0) + np.exp(h[3:]),
    )


def log_jacobian(h):
    """log |d constrained / d unconstrained| of one hyper block."""
    h = np.asarray(h, dtype=float)
    return float(h[1] + h[2] + np.sum(h[3:]))


def pack(state, hypers, spec):
    """Concatenate latents and both unconstrained hyper blocks."""
    ka, kb = hypers
    return np.concatenate(
        [
            state.alpha,
            state.beta,
            to_unconstrained(ka, spec.alpha.bound),
            to_unconstrained(kb, spec.beta.bound),
        ]
    )


def unpack(packed, K, spec):
    """Inverse of :func:`pack`: returns ``(LatentState, (params_a, params_b))``."""
    q = np.asarray(packed, dtype=float)
    nh = (q.size - 2 * K) // 2
    if nh < 4 or q.size != 2 * K + 2 * nh:
        raise InvalidInputError(f"packed vector of length {q.size} does not fit K={K}")
    state = LatentState(q[:K], q[K : 2 * K])
    ha = q[2 * K : 2 * K + nh]
    hb = q[2 * K + nh :]
    return state, (to_constrained(ha, spec.alpha.bound), to_constrained(hb, spec.beta.bound))


# ------------------------------------------------------- constrained-space API


def _check_lengths(dataset, state):
    if state.alpha.size != dataset.K:
        raise InvalidInputError("latent state length does not match the dataset")


def gamma_loglik(dataset, state):
    """Gamma log-likelihood with shape ``exp(alpha)`` and rate ``exp(beta)``."""
    _check_lengths(dataset, state)
    a = np.exp(state.alpha)
    b = np.exp(state.beta)
    y = dataset.y
    return float(np.sum(a * state.beta - special.gammaln(a) + (a - 1.0) * np.log(y) - b * y))


def gamma_loglik_grad(dataset, state):
    _check_lengths(dataset, state)
    a = np.exp(state.alpha)
    g_alpha = a * (state.beta - special.digamma(a) + np.log(dataset.y))
    g_beta = a - np.exp(state.beta) * dataset.y
    return g_alpha, g_beta


def _halfnormal_logpdf(x, scale):
    return float(np.log(2.0) + stats.norm.logpdf(x, scale=scale))


def hyperprior_logpdf(prior, params):
    """Log-density of one process's hyperparameters in constrained space.

    Returns ``-inf`` when a length scale lies below a positive bound.
    """
    ls = params.length_scales
    if prior.bound > 0 and np.any(ls < prior.bound):
        return -np.inf
    total = float(stats.norm.logpdf(params.mean, prior.gamma_mu, prior.rho_mu))
    total += _halfnormal_logpdf(params.noise_std, prior.rho_noise)
    total += _halfnormal_logpdf(params.signal_std, prior.rho_signal)
    if prior.bound > 0:
        a = (prior.bound - prior.gamma_l) / prior.rho_l
        total += float(
            np.sum(stats.truncnorm.logpdf(ls, a, np.inf, prior.gamma_l, prior.rho_l))
        )
    else:
        total += float(np.sum(stats.norm.logpdf(ls, prior.gamma_l, prior.rho_l)))
    return total


def latent_logprior(grid, values, params):
    """GP log-density of one latent field, noise term included."""
    cov = add_noise_diag(se_covariance(grid, grid, params), params.noise_std)
    return gaussian_logpdf(values, np.full(len(values), params.mean), cov)


def joint_logpost(dataset, state, hypers, spec):
    """Unnormalized joint log-posterior in constrained space."""
    ka, kb = hypers
    return (
        gamma_loglik(dataset, state)
        + latent_logprior(dataset.grid, state.alpha, ka)
        + latent_logprior(dataset.grid, state.beta, kb)
        + hyperprior_logpdf(spec.alpha, ka)
        + hyperprior_logpdf(spec.beta, kb)
    )


def surrogate_logpost(grid, m_block, P_block, params, prior):
    """Surrogate hyper posterior: the PL mean treated as data, P as noise."""
    m_block = np.asarray(m_block, dtype=float)
    cov = se_covariance(grid, grid, params) + np.asarray(P_block, dtype=float)
    like = gaussian_logpdf(m_block, np.full(m_block.size, params.mean), cov)
    return like + hyperprior_logpdf(prior, params)


# ------------------------------------------------ unconstrained packed API


def _kernel_args(dataset, spec, kappa=1.0, moments=None):
    K = dataset.K
    if moments is None:
        m = np.zeros(2 * K)
        P = np.zeros((2 * K, 2 * K))
    else:
        m, P = moments
        m = np.asarray(m, dtype=float)
        P = np.asarray(P, dtype=float)
        if m.shape != (2 * K,) or P.shape != (2 * K, 2 * K):
            raise InvalidInputError("moments must have shapes (2K,) and (2K, 2K)")
    return (
        dataset.geometry,
        dataset.y,
        dataset.log_y,
        spec.as_array() if spec is not None else np.zeros((2, 7)),
        float(kappa),
        np.ascontiguousarray(m[:K]),
        np.ascontiguousarray(P[:K, :K]),
        np.ascontiguousarray(m[K:]),
        np.ascontiguousarray(P[K:, K:]),
    )


def _check_packed(dataset, packed):
    q = np.asarray(packed, dtype=float)
    if q.shape != (n_params(dataset.K, dataset.D),):
        raise InvalidInputError(
            f"packed vector must have length {n_params(dataset.K, dataset.D)}"
        )
    return q


def joint_logpost_packed(dataset, packed, spec):
    """Joint log-posterior of a packed vector, Jacobian terms included."""
    q = _check_packed(dataset, packed)
    value, _ = kern.joint_logp_grad(
        q, dataset.geometry, dataset.y, dataset.log_y, spec.as_array()
    )
    return float(value)


def joint_logpost_grad(dataset, packed, spec):
    """Gradient of :func:`joint_logpost_packed` (length 2K + 2D + 6)."""
    q = _check_packed(dataset, packed)
    _, grad = kern.joint_logp_grad(
        q, dataset.geometry, dataset.y, dataset.log_y, spec.as_array()
    )
    return np.asarray(grad)


def tempered_logpost(dataset, packed, spec, m, P, kappa, with_grad=False):
    """Blend of the joint posterior and the two surrogate hyper posteriors.

    Hyperpriors and Jacobians enter once with weight one. ``kappa == 1``
    runs exactly the joint code path.
    """
    if not 0.0 <= kappa <= 1.0:
        raise InvalidInputError(f"kappa must lie in [0, 1], got {kappa}")
    q = _check_packed(dataset, packed)
    value, grad = kern.tempered_logp_grad(q, _kernel_args(dataset, spec, kappa, (m, P)))
    if with_grad:
        return float(value), np.asarray(grad)
    return float(value)


def target_args(dataset, spec, kappa=1.0, moments=None, mode=kern.MODE_TEMPERED,
                latent=None, prior_row=None):
    """Argument tuple for :func:`lggp._model_kernels.lggp_target`."""
    geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b = _kernel_args(dataset, spec, kappa, moments)
    if prior_row is not None:
        prior = np.vstack([prior_row, prior_row])
    fixed = np.zeros(0) if latent is None else np.ascontiguousarray(latent, dtype=float)
    return (mode, geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b, fixed)


def make_target(dataset, spec, kappa=1.0, moments=None, initial=None):
    """Sampler target for the tempered density (the joint one at kappa=1)."""
    if not 0.0 <= kappa <= 1.0:
        raise InvalidInputError(f"kappa must lie in [0, 1], got {kappa}")
    return TargetFn(
        fn=kern.lggp_target,
        args=target_args(dataset, spec, kappa, moments),
        dim=n_params(dataset.K, dataset.D),
        initial=initial if initial is not None else initial_position(dataset, spec),
        names=param_names(dataset.K, dataset.D),
    )


def make_frozen_target(dataset, spec, moments, latent, initial=None):
    """Tempered density at kappa=0 over the hyper blocks, latents held fixed."""
    K, D = dataset.K, dataset.D
    h0 = initial_position(dataset, spec)[2 * K :] if initial is None else initial
    return TargetFn(
        fn=kern.lggp_target,
        args=target_args(dataset, spec, 0.0, moments, kern.MODE_FROZEN_LATENT, latent),
        dim=2 * n_hyper(D),
        initial=np.asarray(h0, dtype=float),
        names=param_names(K, D)[2 * K :],
    )


def make_surrogate_target(dataset, m_block, P_block, prior):
    """Sampler target over one unconstrained hyper block."""
    K, D = dataset.K, dataset.D
    m = np.zeros(2 * K)
    P = np.zeros((2 * K, 2 * K))
    m[:K] = m_block
    P[:K, :K] = P_block
    args = target_args(dataset, None, 0.0, (m, P), kern.MODE_SURROGATE,
                       prior_row=prior.as_row())
    names = ["mu", "log_sigma_e", "log_sigma_s"] + [f"log_l[{d}]" for d in range(D)]
    return TargetFn(kern.lggp_target, args, n_hyper(D), prior_median_block(prior, D), names)


# --------------------------------------------------------- initialization


def prior_medians(prior, D=1):
    """Constrained prior medians as ``KernelParams``.

    With the truncation disabled the length-scale median is taken from the
    normal restricted to positive values.
    """
    half = float(stats.halfnorm.median())
    lower = max(prior.bound, 0.0)
    a = (lower - prior.gamma_l) / prior.rho_l
    l_med = float(stats.truncnorm.median(a, np.inf, prior.gamma_l, prior.rho_l))
    return KernelParams(
        mean=prior.gamma_mu,
        noise_std=half * prior.rho_noise,
        signal_std=half * prior.rho_signal,
        length_scales=np.full(D, l_med),
    )


def prior_median_block(prior, D=1):
    return to_unconstrained(prior_medians(prior, D), prior.bound)


def initial_position(dataset, spec, latent=None):
    """Latents at the prior means (or ``latent``), hypers at prior medians."""
    K, D = dataset.K, dataset.D
    if latent is None:
        latent = np.concatenate([np.full(K, spec.alpha.gamma_mu), np.full(K, spec.beta.gamma_mu)])
    latent = np.asarray(latent, dtype=float)
    if latent.shape != (2 * K,):
        raise InvalidInputError("initial latent vector must have length 2K")
    return np.concatenate(
        [latent, prior_median_block(spec.alpha, D), prior_median_block(spec.beta, D)]
    )
