"""Numba switch.

Set ``MMFUSION_DISABLE_JIT=1`` to force the pure-numpy kernels, e.g. when
numba is unavailable or when profiling the fallback path.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = numba is not None and not _flag("MMFUSION_DISABLE_JIT")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
