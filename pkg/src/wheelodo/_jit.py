"""Optional numba acceleration for the per-sample kernels.

Set ``WHEELODO_NO_JIT=1`` before import to run every kernel as plain
Python/numpy. Both paths execute the same source.
"""
import os

JIT_ENABLED = os.environ.get("WHEELODO_NO_JIT", "").strip().lower() not in ("1", "true", "yes")

if JIT_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dependency
        JIT_ENABLED = False

if JIT_ENABLED:

    def jit(fn):
        return _njit(cache=True)(fn)

else:

    def jit(fn):
        return fn


def python_impl(fn):
    """Return the un-jitted function behind a kernel (identity without numba)."""
    return getattr(fn, "py_func", fn)
