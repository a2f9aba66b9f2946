"""Inference schemes and predictive sampling.

* ``fit_direct_hmc``: NUTS on the full joint posterior.
* ``fit_pl_approx``: posterior linearization for the latents, then NUTS on
  the two surrogate hyperparameter posteriors.
* ``fit_pl_tempered``: posterior linearization, then NUTS through a sequence
  of densities bridging the surrogate and the joint posterior.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import model as M
from .exceptions import InvalidInputError
from .gp_core import KernelParams, add_noise_diag, as_grid, chol_factor, gp_predict, se_covariance
from .linearization import iterate_pl, sample_gamma, split_blocks
from .sampler import HmcConfig, run_chain

logger = logging.getLogger(__name__)

Z90 = float(stats.norm.ppf(0.95))


@dataclass
class TemperSchedule:
    """Tempering exponents with per-step ``(n_samples, n_warmup)``.

    Only the draws of the final step are retained; intermediate steps hand
    their last state to the next one.
    """

    kappas: tuple = (0.0, 0.5, 1.0)
    warmups: tuple = (100, 100, 1000)
    n_samples: int = 1000

    def __post_init__(self):
        k = np.asarray(self.kappas, dtype=float)
        if k.size < 1 or k[-1] != 1.0 or (k.size > 1 and k[0] != 0.0):
            raise InvalidInputError("kappa schedule must start at 0 and end at 1")
        if np.any(np.diff(k) <= 0):
            raise InvalidInputError("kappa schedule must be strictly increasing")
        if len(self.warmups) != k.size:
            raise InvalidInputError("one warmup length per kappa is required")
        if any(w < 0 for w in self.warmups) or self.n_samples < 1:
            raise InvalidInputError("warmups must be >= 0 and n_samples >= 1")
        self.kappas = tuple(float(v) for v in k)
        self.warmups = tuple(int(w) for w in self.warmups)

    def steps(self):
        last = len(self.kappas) - 1
        for i, (kappa, warm) in enumerate(zip(self.kappas, self.warmups)):
            yield kappa, warm, (self.n_samples if i == last else 0)


@dataclass
class Summary:
    """Per-location mean and 5/50/95% quantiles."""

    mean: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray

    @classmethod
    def from_draws(cls, draws):
        draws = np.asarray(draws, dtype=float)
        q05, q50, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
        return cls(draws.mean(axis=0), q05, q50, q95)

    @classmethod
    def from_gaussian(cls, mean, var):
        sd = np.sqrt(np.maximum(var, 0.0))
        mean = np.asarray(mean, dtype=float)
        return cls(mean.copy(), mean - Z90 * sd, mean.copy(), mean + Z90 * sd)

    @property
    def width(self):
        return self.q95 - self.q05


@dataclass
class InferenceResult:
    mode: str
    grid: np.ndarray
    latent: dict
    hyper_names: list
    hyper_draws: np.ndarray
    predictive: Summary = None
    test_grid: np.ndarray = None
    wall_time: dict = field(default_factory=dict)
    seed: int = None
    config: dict = field(default_factory=dict)
    divergences: int = 0
    alpha_draws: np.ndarray = None
    beta_draws: np.ndarray = None
    moments: object = None
    hyper_mean: tuple = None
    chains: list = field(default_factory=list)


def hyper_names(D):
    names = []
    for p in ("alpha", "beta"):
        names += [f"mu_{p}", f"sigma_e_{p}", f"sigma_s_{p}"]
        names += [f"l_{p}[{d}]" for d in range(D)]
    return names


def _constrain_block(h, bound):
    out = np.array(h, dtype=float, copy=True)
    out[:, 1:3] = np.exp(out[:, 1:3])
    out[:, 3:] = max(bound, 0.0) + np.exp(out[:, 3:])
    return out


def _params_from_row(row):
    return KernelParams(row[0], row[1], row[2], row[3:])


def psd_sqrt(cov):
    """Symmetric square root with negative eigenvalues clipped to zero."""
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return evecs * np.sqrt(np.maximum(evals, 0.0))


def _spawn(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _chain_walls(chains):
    return (
        sum(c.wall_time["warmup"] for c in chains),
        sum(c.wall_time["sampling"] for c in chains),
    )


# ------------------------------------------------------------ predictive


def predict_latent(result, test_grid=None, n_draws=None, rng=None):
    """Draw latent fields at ``test_grid`` from the posterior predictive.

    Sample-based results use each retained draw with its own hypers; the
    approximate scheme draws latents from the linearized Gaussian and uses
    the posterior-mean hypers with a precomputed predictive covariance.

    Returns ``(alpha_star, beta_star)``, each (n_draws, K*).
    """
    rng = np.random.default_rng() if rng is None else rng
    grid = result.grid
    test = grid if test_grid is None else as_grid(test_grid)
    if test.size == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    if result.mode == "pl-approx":
        return _predict_approx(result, test, n_draws, rng)
    n_avail = result.alpha_draws.shape[0]
    n = n_avail if n_draws is None else int(n_draws)
    idx = np.linspace(0, n_avail - 1, n).round().astype(int) if n else np.zeros(0, int)
    D = grid.shape[1]
    nh = D + 3
    out = []
    for block, latent in ((0, result.alpha_draws), (1, result.beta_draws)):
        star = np.empty((idx.size, test.shape[0]))
        for r, j in enumerate(idx):
            params = _params_from_row(result.hyper_draws[j, block * nh : (block + 1) * nh])
            mean, cov = gp_predict(grid, test, latent[j], params)
            star[r] = mean + psd_sqrt(cov) @ rng.standard_normal(test.shape[0])
        out.append(star)
    return out[0], out[1]


def _predict_approx(result, test, n_draws, rng):
    m_a, m_b, P_a, P_b, _ = split_blocks(result.moments)
    n = 1000 if n_draws is None else int(n_draws)
    grid = result.grid
    out = []
    for (m, P), params in zip(((m_a, P_a), (m_b, P_b)), result.hyper_mean):
        latent = m[None, :] + rng.standard_normal((n, m.size)) @ psd_sqrt(P).T
        train = chol_factor(add_noise_diag(se_covariance(grid, grid, params), params.noise_std))
        cross = se_covariance(test, grid, params)
        half = train.half_solve(cross.T)
        cov = se_covariance(test, test, params) - half.T @ half
        L = psd_sqrt(cov)
        means = (cross @ train.solve((latent - params.mean).T)).T + params.mean
        out.append(means + rng.standard_normal((n, test.shape[0])) @ L.T)
    return out[0], out[1]


def predict_data(alpha_star, beta_star, rng=None):
    """Gamma draws at every predictive latent draw, with their summary."""
    rng = np.random.default_rng() if rng is None else rng
    alpha_star = np.asarray(alpha_star, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if alpha_star.shape != beta_star.shape:
        raise InvalidInputError("alpha and beta draw matrices must have equal shape")
    y_star = sample_gamma(alpha_star, beta_star, rng)
    return y_star, Summary.from_draws(y_star)


def _attach_prediction(result, rng, n_draws=None):
    t0 = time.perf_counter()
    a_star, b_star = predict_latent(result, None, n_draws, rng)
    _, result.predictive = predict_data(a_star, b_star, rng)
    result.test_grid = result.grid
    result.wall_time["prediction"] = time.perf_counter() - t0


def _finish(result, t_start):
    total = time.perf_counter() - t_start
    phases = sum(result.wall_time.get(k, 0.0) for k in ("pl", "warmup", "sampling", "prediction"))
    result.wall_time["overhead"] = max(total - phases, 0.0)
    result.wall_time["total"] = total
    return result


# ------------------------------------------------------------ schemes


def _sample_result(mode, dataset, spec, chains, draws, seed, config):
    K, D = dataset.K, dataset.D
    nh = D + 3
    hyp = np.hstack(
        [
            _constrain_block(draws[:, 2 * K : 2 * K + nh], spec.alpha.bound),
            _constrain_block(draws[:, 2 * K + nh :], spec.beta.bound),
        ]
    )
    alpha = draws[:, :K].copy()
    beta = draws[:, K : 2 * K].copy()
    return InferenceResult(
        mode=mode,
        grid=dataset.grid,
        latent={"alpha": Summary.from_draws(alpha), "beta": Summary.from_draws(beta)},
        hyper_names=hyper_names(D),
        hyper_draws=hyp,
        seed=seed,
        config=dict(config),
        divergences=int(sum(c.divergences for c in chains)),
        alpha_draws=alpha,
        beta_draws=beta,
        chains=list(chains),
    )


def fit_direct_hmc(dataset, spec, hmc_config=None, seed=0, mode="hmc", predict=True,
                   n_predict=None, initial=None):
    """NUTS on the joint posterior, started from prior means and medians."""
    t_start = time.perf_counter()
    hmc_config = HmcConfig() if hmc_config is None else hmc_config
    rng_chain, rng_pred = _spawn(seed, 2)
    target = M.make_target(dataset, spec, initial=initial)
    chain = run_chain(target, hmc_config, rng_chain)
    result = _sample_result(
        mode, dataset, spec, [chain], chain.draws, seed, vars(hmc_config)
    )
    result.wall_time = {"pl": 0.0, "warmup": chain.wall_time["warmup"],
                        "sampling": chain.wall_time["sampling"]}
    if predict:
        _attach_prediction(result, rng_pred, n_predict)
    return _finish(result, t_start)


def fit_pl_approx(dataset, spec, J=10_000, T=5, hmc_config=None, seed=0, predict=True,
                  n_predict=None, tol=1e-3):
    """Linearized latent posterior plus surrogate hyperparameter posteriors."""
    t_start = time.perf_counter()
    hmc_config = HmcConfig.short() if hmc_config is None else hmc_config
    rng_pl, rng_a, rng_b, rng_pred = _spawn(seed, 4)
    t0 = time.perf_counter()
    moments = iterate_pl(spec, dataset, J, T, rng_pl, tol=tol)
    t_pl = time.perf_counter() - t0
    m_a, m_b, P_a, P_b, _ = split_blocks(moments)
    chains = []
    blocks = []
    for (m, P), prior, rng in (((m_a, P_a), spec.alpha, rng_a), ((m_b, P_b), spec.beta, rng_b)):
        target = M.make_surrogate_target(dataset, m, P, prior)
        chain = run_chain(target, hmc_config, rng)
        chains.append(chain)
        blocks.append(_constrain_block(chain.draws, prior.bound))
    hyp = np.hstack(blocks)
    nh = dataset.D + 3
    var = np.diag(moments.P)
    K = dataset.K
    config = dict(vars(hmc_config), J=J, T=T, tol=tol)
    result = InferenceResult(
        mode="pl-approx",
        grid=dataset.grid,
        latent={
            "alpha": Summary.from_gaussian(m_a, var[:K]),
            "beta": Summary.from_gaussian(m_b, var[K:]),
        },
        hyper_names=hyper_names(dataset.D),
        hyper_draws=hyp,
        seed=seed,
        config=config,
        divergences=int(sum(c.divergences for c in chains)),
        moments=moments,
        hyper_mean=(
            _params_from_row(hyp[:, :nh].mean(axis=0)),
            _params_from_row(hyp[:, nh:].mean(axis=0)),
        ),
        chains=chains,
    )
    warm, samp = _chain_walls(chains)
    result.wall_time = {"pl": t_pl, "warmup": warm, "sampling": samp}
    if predict:
        _attach_prediction(result, rng_pred, n_predict)
    return _finish(result, t_start)


def fit_pl_tempered(dataset, spec, J=10_000, T=5, schedule=None, hmc_config=None, seed=0,
                    predict=True, n_predict=None, tol=1e-3):
    """Linearization followed by NUTS along a tempered sequence.

    The first step starts from the linearized latent mean and prior-median
    hypers; each later step starts from the last state of the previous
    one. At ``kappa = 0`` the latents carry no density, so that step
    samples the hyper blocks only, with latents held at the linearized mean.
    """
    t_start = time.perf_counter()
    schedule = TemperSchedule() if schedule is None else schedule
    base = HmcConfig() if hmc_config is None else hmc_config
    rngs = _spawn(seed, len(schedule.kappas) + 2)
    t0 = time.perf_counter()
    moments = iterate_pl(spec, dataset, J, T, rngs[0], tol=tol)
    t_pl = time.perf_counter() - t0
    K = dataset.K
    q = M.initial_position(dataset, spec, latent=moments.m)
    chains = []
    for i, (kappa, warm, n_samp) in enumerate(schedule.steps()):
        cfg = HmcConfig(
            n_samples=n_samp,
            n_warmup=warm,
            target_accept=base.target_accept,
            max_tree_depth=base.max_tree_depth,
            mass_matrix_mode=base.mass_matrix_mode,
            initial_step_size=base.initial_step_size,
            seed=base.seed,
        )
        if kappa == 0.0:
            target = M.make_frozen_target(dataset, spec, (moments.m, moments.P), q[: 2 * K])
            chain = run_chain(target, cfg, rngs[i + 1], initial=q[2 * K :])
            q = np.concatenate([q[: 2 * K], chain.final_state])
        else:
            target = M.make_target(dataset, spec, kappa, (moments.m, moments.P))
            chain = run_chain(target, cfg, rngs[i + 1], initial=q)
            q = chain.final_state
        logger.info("tempering step kappa=%g done (%d divergences)", kappa, chain.divergences)
        chains.append(chain)
    final = chains[-1]
    config = dict(vars(base), J=J, T=T, tol=tol, kappas=list(schedule.kappas),
                  warmups=list(schedule.warmups), n_samples=schedule.n_samples)
    result = _sample_result("pl-tempered", dataset, spec, [final], final.draws, seed, config)
    result.moments = moments
    result.chains = chains
    warm, samp = _chain_walls(chains)
    result.wall_time = {"pl": t_pl, "warmup": warm, "sampling": samp}
    if predict:
        _attach_prediction(result, rngs[-1], n_predict)
    return _finish(result, t_start)


# ------------------------------------------------------------ simulation


SYNTHETIC_TRUTH = (
    KernelParams(mean=2.0, noise_std=1e-3, signal_std=1.0, length_scales=[0.05]),
    KernelParams(mean=1.0, noise_std=1e-3, signal_std=1.0, length_scales=[0.5]),
)


def simulate_lggp(grid, truth=SYNTHETIC_TRUTH, rng=None):
    """Draw latent fields from their GPs and gamma data on ``grid``.

    Returns ``(dataset, alpha, beta)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    grid = as_grid(grid)
    fields = []
    for params in truth:
        cov = add_noise_diag(se_covariance(grid, grid, params), params.noise_std)
        L = chol_factor(cov).lower
        fields.append(params.mean + L @ rng.standard_normal(grid.shape[0]))
    alpha, beta = fields
    y = sample_gamma(alpha, beta, rng)
    return M.Dataset(grid, y), alpha, beta


def simulate_from_mean(grid, mean_vector, rate=1000.0, rng=None):
    """Gamma data with constant rate and mean ``mean_vector``.

    The shape field is ``mean_vector * rate``, so ``E[y] = mean_vector``.
    """
    rng = np.random.default_rng() if rng is None else rng
    grid = as_grid(grid)
    mean_vector = np.asarray(mean_vector, dtype=float)
    if mean_vector.shape != (grid.shape[0],) or np.any(mean_vector <= 0):
        raise InvalidInputError("mean vector must be positive with one entry per grid point")
    alpha = np.log(mean_vector * rate)
    beta = np.full(grid.shape[0], np.log(rate))
    y = sample_gamma(alpha, beta, rng)
    return M.Dataset(grid, y), alpha, beta
