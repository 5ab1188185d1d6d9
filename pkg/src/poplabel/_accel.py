"""Backend selection for the hot interaction kernels.

Every kernel-level function in the package is decorated with :func:`kernel`.
When numba is importable and ``POPLABEL_DISABLE_NUMBA`` is unset (or ``0``),
the decorator compiles the function with ``numba.njit``; otherwise the plain
Python function is used unchanged.  Both paths consume identical pre-drawn
random blocks, so they produce bit-identical runs.
"""
import os

_flag = os.environ.get("POPLABEL_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    import numba
    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "python"


def kernel(fn=None, *, cache=True):
    """Compile ``fn`` in nopython mode when the numba backend is active."""
    def wrap(f):
        if HAS_NUMBA:
            return numba.njit(cache=cache)(f)
        return f
    if fn is None:
        return wrap
    return wrap(fn)


def new_int_dict():
    """Empty int64 -> int64 mapping usable from kernels of the active backend."""
    if HAS_NUMBA:
        from numba import types
        from numba.typed import Dict
        return Dict.empty(key_type=types.int64, value_type=types.int64)
    return {}
