"""Cholesky factorization plus inverse of a symmetric positive definite matrix.

The numba path calls LAPACK ``dpotrf``/``dpotri`` from scipy's cython
bindings through named external symbols, which keeps the compiled kernels
cacheable. The numpy path calls the same routines through scipy.
"""
import numpy as np
from scipy.linalg import lapack

from ._numba import USE_NUMBA, njit


def _chol_inverse_scipy(C):
    factor, info = lapack.dpotrf(C, lower=1, clean=1)
    if info != 0:
        return False, -np.inf, C
    diag = np.diag(factor)
    if not np.all(diag > 0.0):
        return False, -np.inf, C
    logdet = 2.0 * float(np.sum(np.log(diag)))
    inv, info = lapack.dpotri(factor, lower=1)
    if info != 0:
        return False, -np.inf, C
    inv = np.tril(inv) + np.tril(inv, -1).T
    return True, logdet, inv


if USE_NUMBA:
    import llvmlite.binding as ll
    from numba import types
    from numba.extending import get_cython_function_address

    for _name in ("dpotrf", "dpotri"):
        ll.add_symbol(
            "lggp_" + _name,
            get_cython_function_address("scipy.linalg.cython_lapack", _name),
        )
    _sig = types.void(
        types.voidptr, types.voidptr, types.voidptr, types.voidptr, types.voidptr
    )
    _dpotrf = types.ExternalFunction("lggp_dpotrf", _sig)
    _dpotri = types.ExternalFunction("lggp_dpotri", _sig)

    @njit
    def chol_inverse(C):
        """Return ``(ok, log|C|, C^{-1})``; ``ok`` is False if C is not PD."""
        n = C.shape[0]
        A = np.ascontiguousarray(C).copy()
        # C-order buffer read as Fortran: 'L' there is our upper triangle
        uplo = np.array([76], dtype=np.uint8)
        dim = np.array([n], dtype=np.int32)
        info = np.zeros(1, dtype=np.int32)
        _dpotrf(uplo.ctypes, dim.ctypes, A.ctypes, dim.ctypes, info.ctypes)
        if info[0] != 0:
            return False, -np.inf, A
        logdet = 0.0
        for i in range(n):
            if not A[i, i] > 0.0:
                return False, -np.inf, A
            logdet += 2.0 * np.log(A[i, i])
        _dpotri(uplo.ctypes, dim.ctypes, A.ctypes, dim.ctypes, info.ctypes)
        if info[0] != 0:
            return False, -np.inf, A
        for i in range(n):
            for j in range(i + 1, n):
                A[j, i] = A[i, j]
        return True, logdet, A

else:
    chol_inverse = _chol_inverse_scipy
