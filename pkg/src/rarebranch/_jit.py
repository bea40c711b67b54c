"""Numba switch.

Every hot loop in the package is written once, in the subset of Python that
numba compiles. Setting ``RAREBRANCH_DISABLE_JIT=1`` (or running without numba
installed) turns the decorators below into no-ops so the same code runs as
plain Python on numpy arrays. Both paths produce identical results.
"""

import os

_FLAG = os.environ.get("RAREBRANCH_DISABLE_JIT", "").strip().lower()

JIT_ENABLED = _FLAG not in ("1", "true", "yes", "on")

if JIT_ENABLED:
    try:
        from numba import njit, types
        from numba.experimental import jitclass
    except ImportError:  # pragma: no cover
        JIT_ENABLED = False

if not JIT_ENABLED:
    types = None

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper

    def jitclass(spec):
        def decorator(cls):
            return cls

        return decorator


__all__ = ["JIT_ENABLED", "njit", "jitclass", "types"]
