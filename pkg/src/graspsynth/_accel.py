"""Optional numba acceleration.

Set ``GRASPSYNTH_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag
is read once at import time; both implementations stay importable so they can
be benchmarked and cross-checked side by side.
"""
import os

ENV_FLAG = "GRASPSYNTH_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(fn=None, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("error_model", "numpy")
    if not HAVE_NUMBA:
        return fn if fn is not None else (lambda f: f)
    if fn is None:
        return numba.njit(**kwargs)
    return numba.njit(**kwargs)(fn)
