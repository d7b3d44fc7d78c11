"""Kernel backend selection.

The hot loops in :mod:`labelfuse.kernels` are plain Python functions over
contiguous numpy arrays. By default they are JIT-compiled with numba; set
``LABELFUSE_BACKEND=numpy`` to run the exact same functions uncompiled
(slow, but handy for debugging and for benchmarking the compiled path
against a pure-numpy baseline). ``LABELFUSE_BACKEND=numba`` makes a missing
numba an error instead of a silent fallback.
"""

import os

ENV_VAR = "LABELFUSE_BACKEND"
_CHOICES = ("auto", "numba", "numpy")


def _resolve() -> str:
    requested = os.environ.get(ENV_VAR, "auto").strip().lower()
    if requested not in _CHOICES:
        raise RuntimeError(f"{ENV_VAR} must be one of {_CHOICES}, got {requested!r}")
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numpy"
    return "numba"


ACTIVE_BACKEND = _resolve()

if ACTIVE_BACKEND == "numba":
    from numba import njit

    def jit_kernel(func):
        return njit(cache=True, nogil=True)(func)

else:

    def jit_kernel(func):
        return func
