"""JIT switch for the hot kernels.

Each kernel exists twice: a pure-numpy version and a loop version compiled
with numba.  ``pick`` returns the compiled one unless numba is missing or the
environment sets ``HBE_DISABLE_NUMBA=1`` (read once, at import).  Both
versions stay importable so the benchmark can compare them side by side.
"""

import os

DISABLED = os.environ.get("HBE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba ships with the environment
    NUMBA_AVAILABLE = False
    _njit = None

USE_NUMBA = NUMBA_AVAILABLE and not DISABLED


def njit(fn):
    """Compile ``fn`` with numba when importable; otherwise return it as is."""
    if not NUMBA_AVAILABLE:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def pick(jitted, fallback):
    return jitted if USE_NUMBA else fallback


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
