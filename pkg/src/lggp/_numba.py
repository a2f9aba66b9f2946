"""Optional numba acceleration.

Set ``LGGP_DISABLE_NUMBA=1`` before import to run every kernel as plain
numpy. Kernel source is shared by both paths; only the decorator changes.
"""
import os


def _identity(func=None, **options):
    if func is None:
        return _identity
    return func


def _flag_disabled():
    value = os.environ.get("LGGP_DISABLE_NUMBA", "0").strip().lower()
    return value in ("1", "true", "yes", "on")


USE_NUMBA = not _flag_disabled()

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if USE_NUMBA:

    def njit(func=None, **options):
        options.setdefault("cache", True)
        if func is None:
            return numba.njit(**options)
        return numba.njit(**options)(func)

else:
    njit = _identity
