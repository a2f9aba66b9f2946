"""Leapfrog integration and one multinomial NUTS transition.

The trajectory is doubled iteratively, not recursively, so the same code can
be compiled by numba. U-turns inside a subtree are detected with momentum
checkpoints; merges add the extra cross-subtree checks used by Stan.

The compiled kernels call :func:`lggp._model_kernels.lggp_target` through
the module-level name ``target``, which keeps them cacheable. Arbitrary
Python targets use :data:`python_kernels`, copies of the same functions
rebound so that ``target(q, (fn, args))`` calls ``fn(q, args)``.

All randomness is passed in as pre-drawn uniforms so that both kernel sets
consume the generator identically. The inverse metric is a 2-D array:
shape (1, n) holds a diagonal, shape (n, n) a dense matrix.
"""
import math
import types

import numpy as np

from ._model_kernels import lggp_target as target
from ._numba import njit

DIVERGENCE_THRESHOLD = 1000.0

KERNEL_NAMES = (
    "velocity",
    "kinetic",
    "leapfrog",
    "no_uturn",
    "popcount",
    "trailing_ones",
    "logaddexp",
    "transition",
)


def n_uniforms(max_depth):
    """Number of uniforms one transition may consume."""
    return (1 << max_depth) + max_depth


@njit
def velocity(p, inv_mass):
    """``M^{-1} p`` for a diagonal (1, n) or dense (n, n) inverse metric."""
    if inv_mass.shape[0] == 1:
        return inv_mass[0] * p
    return inv_mass @ p


@njit
def kinetic(p, inv_mass):
    return 0.5 * np.sum(p * velocity(p, inv_mass))


@njit
def leapfrog(args, q, p, grad, step, inv_mass):
    p_half = p + 0.5 * step * grad
    q_new = q + step * velocity(p_half, inv_mass)
    lp_new, grad_new = target(q_new, args)
    if not np.all(np.isfinite(grad_new)):
        lp_new = -np.inf
    p_new = p_half + 0.5 * step * grad_new
    return q_new, p_new, lp_new, grad_new


@njit
def no_uturn(p_left, p_right, rho, inv_mass):
    return (
        np.sum(velocity(p_left, inv_mass) * rho) > 0.0
        and np.sum(velocity(p_right, inv_mass) * rho) > 0.0
    )


@njit
def popcount(n):
    count = 0
    while n:
        count += n & 1
        n >>= 1
    return count


@njit
def trailing_ones(n):
    count = 0
    while n & 1:
        count += 1
        n >>= 1
    return count


@njit
def logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@njit
def transition(args, q0, lp0, grad0, p0, step, inv_mass, max_depth, dir_u, unif):
    """One NUTS transition from ``(q0, p0)``.

    Returns ``(q, log_density, grad, depth, n_leapfrog, accept_stat,
    diverging, energy)`` where ``energy`` is the Hamiltonian of the
    initial point.
    """
    n = q0.size
    H0 = -lp0 + kinetic(p0, inv_mass)
    q_l, p_l, g_l = q0, p0, grad0
    q_r, p_r, g_r = q0, p0, grad0
    q_prop, lp_prop, g_prop = q0, lp0, grad0
    rho = p0.copy()
    log_w = 0.0
    depth = 0
    n_leap = 0
    sum_accept = 0.0
    diverging = False
    ui = 0
    r_ckpt = np.zeros((max_depth + 1, n))
    rho_ckpt = np.zeros((max_depth + 1, n))
    while depth < max_depth:
        go_right = dir_u[depth] >= 0.5
        if go_right:
            q, p, g = q_r, p_r, g_r
            eps = step
        else:
            q, p, g = q_l, p_l, g_l
            eps = -step
        lp = lp0
        sub_rho = np.zeros(n)
        sub_log_w = -np.inf
        sub_q, sub_lp, sub_g = q, lp0, g
        first_p = p
        valid = True
        for leaf in range(1 << depth):
            q, p, lp, g = leapfrog(args, q, p, g, eps, inv_mass)
            n_leap += 1
            H = -lp + kinetic(p, inv_mass)
            if np.isnan(H):
                H = np.inf
            delta = H - H0
            if delta > DIVERGENCE_THRESHOLD:
                diverging = True
                valid = False
                break
            sum_accept += 1.0 if delta <= 0.0 else math.exp(-delta)
            new_log_w = logaddexp(sub_log_w, -delta)
            u = unif[ui]
            ui += 1
            if u > 0.0 and math.log(u) < -delta - new_log_w:
                sub_q, sub_lp, sub_g = q, lp, g
            elif u == 0.0:
                sub_q, sub_lp, sub_g = q, lp, g
            sub_log_w = new_log_w
            sub_rho = sub_rho + p
            if leaf == 0:
                first_p = p
            if leaf % 2 == 0:
                idx = popcount(leaf >> 1)
                r_ckpt[idx] = p
                rho_ckpt[idx] = sub_rho
            else:
                idx_max = popcount(leaf >> 1)
                idx_min = idx_max - trailing_ones(leaf) + 1
                for i in range(idx_max, idx_min - 1, -1):
                    seg_rho = sub_rho - rho_ckpt[i] + r_ckpt[i]
                    if not no_uturn(r_ckpt[i], p, seg_rho, inv_mass):
                        valid = False
                        break
                if not valid:
                    break
        if not valid:
            break
        depth += 1
        old_p_l = p_l
        old_p_r = p_r
        if go_right:
            q_r, p_r, g_r = q, p, g
        else:
            q_l, p_l, g_l = q, p, g
        u = unif[ui]
        ui += 1
        if sub_log_w > log_w or (u > 0.0 and math.log(u) < sub_log_w - log_w):
            q_prop, lp_prop, g_prop = sub_q, sub_lp, sub_g
        old_rho = rho
        rho = rho + sub_rho
        log_w = logaddexp(log_w, sub_log_w)
        if not no_uturn(p_l, p_r, rho, inv_mass):
            break
        if go_right:
            if not no_uturn(p_l, first_p, old_rho + first_p, inv_mass):
                break
            if not no_uturn(old_p_r, p_r, sub_rho + old_p_r, inv_mass):
                break
        else:
            if not no_uturn(first_p, p_r, old_rho + first_p, inv_mass):
                break
            if not no_uturn(p_l, old_p_l, sub_rho + old_p_l, inv_mass):
                break
    accept_stat = sum_accept / n_leap if n_leap > 0 else 0.0
    return q_prop, lp_prop, g_prop, depth, n_leap, accept_stat, diverging, H0


def _call_user_target(q, args):
    fn, inner = args
    return fn(q, inner)


def _python_kernels():
    namespace = dict(globals())
    namespace["target"] = _call_user_target
    for name in KERNEL_NAMES:
        func = getattr(namespace[name], "py_func", namespace[name])
        namespace[name] = types.FunctionType(
            func.__code__, namespace, func.__name__, func.__defaults__, func.__closure__
        )
    return types.SimpleNamespace(**{name: namespace[name] for name in KERNEL_NAMES})


compiled_kernels = types.SimpleNamespace(**{name: globals()[name] for name in KERNEL_NAMES})
python_kernels = _python_kernels()
