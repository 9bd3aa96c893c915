"""numba switch.

Set ``DIFFMATCH_JIT=0`` to run every kernel as plain Python/numpy. The
flag is read once at import time.
"""
import os

_flag = os.environ.get("DIFFMATCH_JIT", "1").strip().lower()
JIT_ENABLED = _flag not in ("0", "false", "no", "off")

if JIT_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a hard dependency
        JIT_ENABLED = False

if JIT_ENABLED:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def with_fallback(fallback):
    """Compile the decorated loop kernel, or use ``fallback`` when JIT is off.

    For kernels whose loop body is fast compiled but slow as plain Python;
    ``fallback`` must be a vectorized numpy function with the same contract.
    """

    def wrap(fn):
        if not JIT_ENABLED:
            return fallback
        kernel = njit(error_model="numpy")(fn)
        kernel.fallback = fallback
        return kernel

    return wrap


def py_func(kernel):
    """Return the path a kernel takes without numba: its numpy fallback if it
    has one, else its uncompiled body (the kernel itself when JIT is off)."""
    fb = getattr(kernel, "fallback", None)
    return fb if fb is not None else getattr(kernel, "py_func", kernel)
