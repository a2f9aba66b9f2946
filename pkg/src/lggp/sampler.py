"""No-U-Turn Hamiltonian Monte Carlo with dual-averaging step-size adaptation.

Targets supply ``fn(q, args) -> (log_density, gradient)``. Targets built on
:func:`lggp._model_kernels.lggp_target` run through the compiled transition
kernel; any other callable runs through a pure-Python copy of it.
"""
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _nuts_kernels
from ._model_kernels import lggp_target
from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)

LONG_PRESET = {"n_samples": 20_000, "n_warmup": 10_000}
SHORT_PRESET = {"n_samples": 1000, "n_warmup": 1200}
MASS_MODES = ("identity", "diagonal", "dense")


@dataclass
class HmcConfig:
    n_samples: int = 1000
    n_warmup: int = 1000
    target_accept: float = 0.99
    max_tree_depth: int = 10
    mass_matrix_mode: str = "diagonal"
    seed: int = 0
    initial_step_size: float = 0.1

    def __post_init__(self):
        if self.n_samples < 0 or self.n_warmup < 0 or self.n_samples + self.n_warmup < 1:
            raise InvalidInputError("n_samples and n_warmup must be >= 0 with a positive sum")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidInputError("target_accept must lie in (0, 1)")
        if not 1 <= self.max_tree_depth <= 15:
            raise InvalidInputError("max_tree_depth must lie in [1, 15]")
        if self.mass_matrix_mode not in MASS_MODES:
            raise InvalidInputError(f"mass_matrix_mode must be one of {MASS_MODES}")
        if not self.initial_step_size > 0:
            raise InvalidInputError("initial_step_size must be positive")

    @classmethod
    def long(cls, **overrides):
        """20,000 draws after 10,000 warmup iterations."""
        return cls(**{**LONG_PRESET, **overrides})

    @classmethod
    def short(cls, **overrides):
        """1000 draws after 1200 warmup iterations."""
        return cls(**{**SHORT_PRESET, **overrides})


@dataclass
class TargetFn:
    """Log-density with gradient.

    Parameters
    ----------
    fn : callable
        ``fn(q, args) -> (float, ndarray)``. May be a numba dispatcher.
    args : tuple
        Extra arguments forwarded to ``fn``.
    dim : int
        Dimension of ``q``.
    initial : ndarray, optional
        Default starting position.
    names : list of str, optional
        Coordinate names used when exporting draws.
    """

    fn: object
    args: tuple
    dim: int
    initial: np.ndarray = None
    names: list = None

    def __call__(self, q):
        lp, grad = self.fn(np.asarray(q, dtype=float), self.args)
        return float(lp), np.asarray(grad)

    @property
    def kernels(self):
        """``(kernel_set, kernel_args)`` for the transition kernels."""
        if self.fn is lggp_target:
            return _nuts_kernels.compiled_kernels, self.args
        return _nuts_kernels.python_kernels, (self.fn, self.args)


@dataclass
class Chain:
    draws: np.ndarray
    log_density: np.ndarray
    accept_stats: np.ndarray
    step_sizes: np.ndarray
    tree_depths: np.ndarray
    n_leapfrog: np.ndarray
    divergences: int
    step_size: float
    inv_mass: np.ndarray
    wall_time: dict = field(default_factory=dict)
    names: list = None
    final_state: np.ndarray = None

    @property
    def n_samples(self):
        return self.draws.shape[0]


def _metric(inv_mass, n):
    """Kernel layout of an inverse metric: (1, n) diagonal or (n, n) dense."""
    if inv_mass is None:
        return np.ones((1, n))
    m = np.asarray(inv_mass, dtype=float)
    if m.shape == (n,):
        return m.reshape(1, n)
    if m.shape == (n, n):
        return np.ascontiguousarray(m)
    raise InvalidInputError(f"inverse mass must have shape ({n},) or ({n}, {n})")


def draw_momentum(inv_mass, rng):
    """Momentum from ``N(0, M)`` given the inverse metric ``M^{-1}``."""
    m = np.asarray(inv_mass, dtype=float)
    z = rng.standard_normal(m.shape[-1])
    if m.ndim == 1:
        return z / np.sqrt(m)
    # M^{-1} = L L' gives M = L^{-T} L^{-1}
    L = np.linalg.cholesky(m)
    return np.linalg.solve(L.T, z)


def leapfrog(target, position, momentum, step, inv_mass=None, n_steps=1):
    """Integrate Hamiltonian dynamics with ``n_steps`` leapfrog steps.

    Returns ``(position, momentum, log_density)``. A non-finite gradient is
    reported through a ``-inf`` log-density, not an exception.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    metric = _metric(inv_mass, q.size)
    lp, grad = target(q)
    kern, kargs = target.kernels
    for _ in range(n_steps):
        q, p, lp, grad = kern.leapfrog(kargs, q, p, grad, step, metric)
        if not np.isfinite(lp):
            break
    return q, p, lp


def hamiltonian(log_density, momentum, inv_mass):
    p = np.asarray(momentum, dtype=float)
    m = np.asarray(inv_mass, dtype=float)
    v = m * p if m.ndim == 1 else m @ p
    return -log_density + 0.5 * float(p @ v)


def nuts_draw(target, current, step, inv_mass, rng, max_depth=10, state=None):
    """Draw the next NUTS state from ``current``.

    Returns ``(next_position, stats)``; ``stats`` carries the acceptance
    statistic for dual averaging, the tree depth, leapfrog count and the
    divergence flag.
    """
    q = np.asarray(current, dtype=float)
    if state is None:
        lp, grad = target(q)
    else:
        lp, grad = state
    p0 = draw_momentum(inv_mass, rng)
    dir_u = rng.random(max_depth)
    unif = rng.random(_nuts_kernels.n_uniforms(max_depth))
    kern, kargs = target.kernels
    metric = _metric(inv_mass, q.size)
    out = kern.transition(kargs, q, lp, grad, p0, step, metric, max_depth, dir_u, unif)
    q_new, lp_new, g_new, depth, n_leap, accept, diverging, energy = out
    stats = {
        "log_density": float(lp_new),
        "grad": g_new,
        "tree_depth": int(depth),
        "n_leapfrog": int(n_leap),
        "accept_stat": float(accept),
        "diverging": bool(diverging),
        "energy": float(energy),
    }
    return q_new, stats


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target statistic."""

    def __init__(self, step_size, target_accept, gamma=0.05, t0=10.0, kappa=0.75):
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.t = 0
        self.h_bar = 0.0
        self.log_step = math.log(step_size)
        self.log_step_bar = 0.0

    def update(self, accept_stat):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        weight = self.t ** (-self.kappa)
        self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar
        return self.step_size

    @property
    def step_size(self):
        return math.exp(self.log_step)

    @property
    def final_step_size(self):
        return math.exp(self.log_step_bar)


def dual_averaging_adapt(accept_history, target_accept, initial_step_size=1.0):
    """Replay an acceptance history through dual averaging.

    Returns the step size proposed after each update.
    """
    da = DualAveraging(initial_step_size, target_accept)
    return np.array([da.update(a) for a in accept_history])


def warmup_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive) of the metric adaptation windows.

    Follows Stan's schedule: a fast initial buffer, doubling slow windows,
    and a fast terminal buffer. Short warmups shrink the buffers to 15% and
    10% of the total.
    """
    if n_warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    ends = []
    start = init_buffer
    window = base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + window
        if end + 2 * window > last:
            end = last
        ends.append(end)
        start = end
        window *= 2
    return ends


def _first_window_length(n_warmup):
    ends = warmup_windows(n_warmup)
    if not ends:
        return 0
    init = 75 if 75 + 50 + 25 <= n_warmup else int(0.15 * n_warmup)
    return ends[0] - init


def _regularized_variance(samples):
    n = samples.shape[0]
    var = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _regularized_covariance(samples):
    """Dense estimate; windows shorter than ``2 * dim`` fall back to the diagonal."""
    n, d = samples.shape
    if n < 2 * d:
        return np.diag(_regularized_variance(samples))
    cov = np.cov(samples, rowvar=False, ddof=1).reshape(d, d) if n > 1 else np.eye(d)
    return (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(d)


def find_reasonable_step_size(target, q, lp, grad, inv_mass, rng, step=1.0):
    """Double or halve ``step`` until one leapfrog step crosses acceptance 1/2."""
    kern, kargs = target.kernels
    p = draw_momentum(inv_mass, rng)
    H0 = hamiltonian(lp, p, inv_mass)
    metric = _metric(inv_mass, q.size)

    def log_ratio(eps):
        _, p1, lp1, _ = kern.leapfrog(kargs, q, p, grad, eps, metric)
        if not np.isfinite(lp1):
            return -np.inf
        return H0 - hamiltonian(lp1, p1, inv_mass)

    direction = 1.0 if log_ratio(step) > math.log(0.5) else -1.0
    for _ in range(50):
        ratio = log_ratio(step)
        if direction > 0 and not ratio > math.log(0.5):
            break
        if direction < 0 and ratio > math.log(0.5):
            break
        step = step * 2.0 if direction > 0 else step / 2.0
    return step


def run_chain(target, config, rng=None, initial=None, callback=None):
    """Warm up and sample one chain.

    Step size is adapted by dual averaging through the whole warmup; with
    ``mass_matrix_mode`` 'diagonal' or 'dense' the inverse mass matrix is
    re-estimated at the end of each warmup window and the step size search
    restarts.

    Raises
    ------
    InvalidInputError
        If the log-density is not finite at the initial position.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    q = np.array(target.initial if initial is None else initial, dtype=float)
    if q.shape != (target.dim,):
        raise InvalidInputError(f"initial position must have shape ({target.dim},)")
    lp, grad = target(q)
    if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
        raise InvalidInputError("log-density is not finite at the initial position")

    inv_mass = np.ones(target.dim)
    step = config.initial_step_size
    n_total = config.n_warmup + config.n_samples
    adapt = config.mass_matrix_mode != "identity"
    estimate = _regularized_covariance if config.mass_matrix_mode == "dense" else _regularized_variance
    windows = warmup_windows(config.n_warmup) if adapt else []
    if config.n_warmup > 0:
        step = find_reasonable_step_size(target, q, lp, grad, inv_mass, rng, step)
    da = DualAveraging(step, config.target_accept)

    draws = np.empty((config.n_samples, target.dim))
    log_density = np.empty(config.n_samples)
    accept_stats = np.empty(n_total)
    step_sizes = np.empty(n_total)
    depths = np.empty(n_total, dtype=int)
    n_leap = np.empty(n_total, dtype=int)
    divergences = 0
    window_starts = [0] + windows[:-1]
    if windows:
        window_starts[0] = windows[0] - _first_window_length(config.n_warmup)
    window_draws = []

    t_start = time.perf_counter()
    t_warm_end = t_start
    for it in range(n_total):
        warm = it < config.n_warmup
        q, stats = nuts_draw(
            target, q, step, inv_mass, rng, config.max_tree_depth, state=(lp, grad)
        )
        lp, grad = stats["log_density"], stats["grad"]
        accept_stats[it] = stats["accept_stat"]
        step_sizes[it] = step
        depths[it] = stats["tree_depth"]
        n_leap[it] = stats["n_leapfrog"]
        if warm:
            step = da.update(stats["accept_stat"])
            if windows and it >= window_starts[0]:
                window_draws.append(q.copy())
            if windows and it + 1 == windows[0]:
                if len(window_draws) >= 2:
                    inv_mass = estimate(np.array(window_draws))
                window_draws = []
                windows.pop(0)
                window_starts.pop(0)
                step = find_reasonable_step_size(target, q, lp, grad, inv_mass, rng, step)
                da.restart(step)
            if it + 1 == config.n_warmup:
                step = da.final_step_size
                t_warm_end = time.perf_counter()
        else:
            j = it - config.n_warmup
            draws[j] = q
            log_density[j] = lp
            divergences += int(stats["diverging"])
        if callback is not None:
            callback(it, q, stats)
    t_end = time.perf_counter()
    if config.n_warmup == 0:
        t_warm_end = t_start
    return Chain(
        draws=draws,
        log_density=log_density,
        accept_stats=accept_stats,
        step_sizes=step_sizes,
        tree_depths=depths,
        n_leapfrog=n_leap,
        divergences=divergences,
        step_size=step,
        inv_mass=inv_mass,
        wall_time={"warmup": t_warm_end - t_start, "sampling": t_end - t_warm_end},
        names=target.names,
        final_state=q.copy(),
    )


def summarize_draws(draws, names=None):
    """Mean, sd and 5/50/95% quantiles per column."""
    draws = np.asarray(draws, dtype=float)
    names = names or [f"x{i}" for i in range(draws.shape[1])]
    q05, q50, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
    return {
        name: {
            "mean": float(draws[:, i].mean()),
            "sd": float(draws[:, i].std(ddof=1)) if draws.shape[0] > 1 else 0.0,
            "q05": float(q05[i]),
            "q50": float(q50[i]),
            "q95": float(q95[i]),
        }
        for i, name in enumerate(names)
    }


def effective_sample_size(x):
    """Single-chain ESS by Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


def export_chain(chain, path_csv, path_json=None):
    """Write draws plus per-draw stats to CSV and a summary to JSON."""
    names = chain.names or [f"x{i}" for i in range(chain.draws.shape[1])]
    offset = chain.accept_stats.size - chain.n_samples
    with open(path_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["log_density", "accept_stat", "tree_depth", "n_leapfrog"])
        for j in range(chain.n_samples):
            row = [repr(float(v)) for v in chain.draws[j]]
            row += [
                repr(float(chain.log_density[j])),
                repr(float(chain.accept_stats[offset + j])),
                int(chain.tree_depths[offset + j]),
                int(chain.n_leapfrog[offset + j]),
            ]
            writer.writerow(row)
    if path_json is not None:
        summary = {
            "parameters": summarize_draws(chain.draws, names),
            "divergences": int(chain.divergences),
            "step_size": float(chain.step_size),
            "wall_time": chain.wall_time,
        }
        with open(path_json, "w") as fh:
            json.dump(summary, fh, indent=2)
