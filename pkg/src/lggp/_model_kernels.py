"""Log-density and gradient kernels for the log-Gaussian gamma process.

Kernels are written in numba-compatible numpy; with numba disabled they run
as ordinary Python functions.

Unconstrained layout of a packed parameter vector (length 2K + 2D + 6)::

    [alpha (K) | beta (K) |
     mu_a, log sig_e_a, log sig_s_a, log(l_a - B_a) (D) |
     mu_b, log sig_e_b, log sig_s_b, log(l_b - B_b) (D)]

Grid geometry is passed as ``geom = (d2u, idx, toeplitz)`` from
:func:`lggp.gp_core.distance_table`, so the kernel is evaluated once per
distinct distance. On Toeplitz grids the compiled path inverts the GP
covariance in O(K^2); the numpy path always uses LAPACK.

Prior rows hold ``(gamma_mu, rho_mu, rho_sig_e, rho_sig_s, gamma_l, rho_l, B)``.
A bound ``B <= 0`` disables the truncation: the length scale is then only
constrained positive and its prior is an untruncated normal.
"""
import math

import numpy as np
from scipy import special

from ._lapack import chol_inverse
from ._numba import USE_NUMBA, njit
from ._toeplitz import toeplitz_inverse

LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -np.inf

# Bernoulli-number coefficients B_2n / (2n) of the digamma asymptotic series.
_DIGAMMA_ASYM = np.array(
    [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ]
)


@njit
def _digamma_scalar(x):
    acc = 0.0
    # recurrence psi(z) = psi(z + 1) - 1/z until z >= 10
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for i in range(_DIGAMMA_ASYM.size - 1, -1, -1):
        series = (series + _DIGAMMA_ASYM[i]) * inv2
    return acc + math.log(x) - 0.5 / x - series


if USE_NUMBA:

    @njit
    def digamma(x):
        out = np.empty_like(x)
        for k in range(x.size):
            out[k] = _digamma_scalar(x[k])
        return out

    @njit
    def gamma_loglik(alpha, beta, y, logy):
        total = 0.0
        for k in range(alpha.size):
            a = math.exp(alpha[k])
            total += a * beta[k] - math.lgamma(a) + (a - 1.0) * logy[k]
            total -= math.exp(beta[k]) * y[k]
        return total

else:
    digamma = special.digamma

    def gamma_loglik(alpha, beta, y, logy):
        a = np.exp(alpha)
        return float(np.sum(a * beta - special.gammaln(a) + (a - 1.0) * logy - np.exp(beta) * y))


@njit
def gamma_loglik_grad(alpha, beta, y, logy):
    a = np.exp(alpha)
    g_alpha = a * (beta - digamma(a) + logy)
    g_beta = a - np.exp(beta) * y
    return g_alpha, g_beta


@njit
def se_values(d2u, sig_s, ls):
    """Kernel values at the distinct squared-distance tuples ``d2u`` (D, U)."""
    expo = np.zeros(d2u.shape[1])
    for d in range(d2u.shape[0]):
        expo += d2u[d] / (ls[d] * ls[d])
    return sig_s * sig_s * np.exp(-0.5 * expo)


@njit
def se_matrix(geom, sig_s, ls):
    d2u, idx, _ = geom
    K = int(math.sqrt(idx.size))
    return se_values(d2u, sig_s, ls)[idx].reshape(K, K)


@njit
def gp_block(geom, resid, sig_e, sig_s, ls, lshift, extra, use_extra):
    """Gaussian log-density of ``resid`` under S(theta) + noise.

    The noise is ``sig_e**2 I`` or, when ``use_extra``, the fixed matrix
    ``extra``. Returns the value, its gradient in ``resid``, and its
    gradients in log sig_e, log sig_s and log(l_d - B).
    """
    d2u, idx, toeplitz = geom
    n = resid.size
    D = d2u.shape[0]
    vals = se_values(d2u, sig_s, ls)
    C = vals[idx].reshape(n, n)
    if use_extra:
        C = C + extra
    else:
        for i in range(n):
            C[i, i] += sig_e * sig_e
    if USE_NUMBA and toeplitz and not use_extra:
        ok, logdet, Cinv = toeplitz_inverse(C[0].copy())
    else:
        ok, logdet, Cinv = chol_inverse(C)
    g_u = np.zeros(D)
    if not ok:
        return NEG_INF, np.zeros(n), 0.0, 0.0, g_u
    # one step of iterative refinement; C is ill-conditioned for tiny sig_e
    v = Cinv @ resid
    v = v + Cinv @ (resid - C @ v)
    quad = resid @ v
    value = -0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * quad
    # entries of W = v v' - C^{-1} summed within each distinct distance
    W = np.outer(v, v) - Cinv
    wsum = np.bincount(idx, weights=W.ravel(), minlength=vals.size)
    ws = wsum * vals
    g_sig_s = np.sum(ws)
    if use_extra:
        g_sig_e = 0.0
    else:
        g_sig_e = sig_e * sig_e * (v @ v - np.trace(Cinv))
    for d in range(D):
        g_u[d] = 0.5 * np.sum(ws * d2u[d]) / ls[d] ** 3 * lshift[d]
    return value, -v, g_sig_e, g_sig_s, g_u


@njit
def unpack_hypers(h, bound):
    """Map an unconstrained hyper block to (mu, sig_e, sig_s, l, l - B_eff)."""
    D = h.size - 3
    mu = h[0]
    sig_e = math.exp(h[1])
    sig_s = math.exp(h[2])
    lshift = np.exp(h[3 : 3 + D])
    base = bound if bound > 0.0 else 0.0
    return mu, sig_e, sig_s, base + lshift, lshift


@njit
def hyper_prior(h, prior):
    """Log-prior of one hyper block in unconstrained space, with Jacobian."""
    D = h.size - 3
    g = np.zeros(h.size)
    mu, sig_e, sig_s, ls, lshift = unpack_hypers(h, prior[6])
    g_mu, rho_mu = prior[0], prior[1]
    total = -0.5 * LOG_2PI - math.log(rho_mu) - 0.5 * ((mu - g_mu) / rho_mu) ** 2
    g[0] = -(mu - g_mu) / rho_mu**2
    for j, sig, rho in ((1, sig_e, prior[2]), (2, sig_s, prior[3])):
        total += math.log(2.0) - 0.5 * LOG_2PI - math.log(rho)
        total += -0.5 * (sig / rho) ** 2 + h[j]
        g[j] = -(sig / rho) ** 2 + 1.0
    gam, rho, bound = prior[4], prior[5], prior[6]
    lognorm = 0.0
    if bound > 0.0:
        lognorm = math.log(0.5 * math.erfc((bound - gam) / (rho * math.sqrt(2.0))))
    for d in range(D):
        total += -0.5 * LOG_2PI - math.log(rho) - 0.5 * ((ls[d] - gam) / rho) ** 2
        total += -lognorm + h[3 + d]
        g[3 + d] = -(ls[d] - gam) / rho**2 * lshift[d] + 1.0
    return total, g


@njit
def latent_prior(geom, latent, h, bound):
    """GP log-density of one latent field and its gradient (latent, hypers)."""
    mu, sig_e, sig_s, ls, lshift = unpack_hypers(h, bound)
    value, g_r, g_e, g_s, g_u = gp_block(
        geom, latent - mu, sig_e, sig_s, ls, lshift, np.zeros((1, 1)), False
    )
    g_h = np.zeros(h.size)
    g_h[0] = -np.sum(g_r)
    g_h[1] = g_e
    g_h[2] = g_s
    g_h[3:] = g_u
    return value, g_r, g_h


@njit
def surrogate_block(geom, m_block, P_block, h, bound):
    """Surrogate GP likelihood of a PL mean block and its hyper gradient."""
    mu, sig_e, sig_s, ls, lshift = unpack_hypers(h, bound)
    value, g_r, g_e, g_s, g_u = gp_block(
        geom, m_block - mu, sig_e, sig_s, ls, lshift, P_block, True
    )
    g_h = np.zeros(h.size)
    g_h[0] = -np.sum(g_r)
    g_h[2] = g_s
    g_h[3:] = g_u
    return value, g_h


@njit
def joint_logp_grad(q, geom, y, logy, prior):
    K = y.size
    nh = 3 + geom[0].shape[0]
    alpha = q[:K]
    beta = q[K : 2 * K]
    ha = q[2 * K : 2 * K + nh]
    hb = q[2 * K + nh :]
    grad = np.zeros(q.size)
    lik = gamma_loglik(alpha, beta, y, logy)
    ga, gb = gamma_loglik_grad(alpha, beta, y, logy)
    va, gra, gha = latent_prior(geom, alpha, ha, prior[0, 6])
    vb, grb, ghb = latent_prior(geom, beta, hb, prior[1, 6])
    pa, gpa = hyper_prior(ha, prior[0])
    pb, gpb = hyper_prior(hb, prior[1])
    total = lik + va + vb + pa + pb
    if not np.isfinite(total):
        return NEG_INF, grad
    grad[:K] = ga + gra
    grad[K : 2 * K] = gb + grb
    grad[2 * K : 2 * K + nh] = gha + gpa
    grad[2 * K + nh :] = ghb + gpb
    return total, grad


@njit
def tempered_logp_grad(q, args):
    """Tempered log-density; ``args = (geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b)``.

    At ``kappa == 1`` this is exactly :func:`joint_logp_grad`. At
    ``kappa == 0`` the gamma likelihood and latent GP priors are skipped.
    Hyperpriors carry weight one for every ``kappa``.
    """
    geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b = args
    if kappa == 1.0:
        return joint_logp_grad(q, geom, y, logy, prior)
    K = y.size
    nh = 3 + geom[0].shape[0]
    ha = q[2 * K : 2 * K + nh]
    hb = q[2 * K + nh :]
    grad = np.zeros(q.size)
    sa, gsa = surrogate_block(geom, m_a, P_a, ha, prior[0, 6])
    sb, gsb = surrogate_block(geom, m_b, P_b, hb, prior[1, 6])
    pa, gpa = hyper_prior(ha, prior[0])
    pb, gpb = hyper_prior(hb, prior[1])
    w = 1.0 - kappa
    total = w * (sa + sb) + pa + pb
    grad[2 * K : 2 * K + nh] = w * gsa + gpa
    grad[2 * K + nh :] = w * gsb + gpb
    if kappa > 0.0:
        alpha = q[:K]
        beta = q[K : 2 * K]
        lik = gamma_loglik(alpha, beta, y, logy)
        ga, gb = gamma_loglik_grad(alpha, beta, y, logy)
        va, gra, gha = latent_prior(geom, alpha, ha, prior[0, 6])
        vb, grb, ghb = latent_prior(geom, beta, hb, prior[1, 6])
        total += kappa * (lik + va + vb)
        grad[:K] = kappa * (ga + gra)
        grad[K : 2 * K] = kappa * (gb + grb)
        grad[2 * K : 2 * K + nh] += kappa * gha
        grad[2 * K + nh :] += kappa * ghb
    if not np.isfinite(total):
        return NEG_INF, np.zeros(q.size)
    return total, grad


@njit
def surrogate_logp_grad(q, args):
    """Surrogate hyper posterior; ``args = (geom, m_block, P_block, prior_row)``."""
    geom, m_block, P_block, prior_row = args
    s, gs = surrogate_block(geom, m_block, P_block, q, prior_row[6])
    p, gp = hyper_prior(q, prior_row)
    total = s + p
    if not np.isfinite(total):
        return NEG_INF, np.zeros(q.size)
    return total, gs + gp


MODE_TEMPERED = 0
MODE_FROZEN_LATENT = 1
MODE_SURROGATE = 2


@njit
def lggp_target(q, args):
    """Single entry point for every LGGP sampling target.

    ``args = (mode, geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b, latent)``.

    * ``MODE_TEMPERED``: ``q`` is a full packed vector.
    * ``MODE_FROZEN_LATENT``: ``q`` holds both hyper blocks; the latents are
      fixed to ``latent``.
    * ``MODE_SURROGATE``: ``q`` is one hyper block scored against
      ``(m_a, P_a)`` with prior row ``prior[0]``.
    """
    mode, geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b, latent = args
    targs = (geom, y, logy, prior, kappa, m_a, P_a, m_b, P_b)
    if mode == MODE_TEMPERED:
        return tempered_logp_grad(q, targs)
    if mode == MODE_FROZEN_LATENT:
        full = np.concatenate((latent, q))
        total, grad = tempered_logp_grad(full, targs)
        return total, grad[latent.size :].copy()
    return surrogate_logp_grad(q, (geom, m_a, P_a, prior[0]))
