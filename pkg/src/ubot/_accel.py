"""Switch between numba-compiled kernels and the pure-numpy fallbacks.

Set ``UBOT_DISABLE_NUMBA=1`` before importing :mod:`ubot` to force the numpy
path even when numba is installed.
"""

import os

_FALSEY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("UBOT_DISABLE_NUMBA", "").strip().lower() in _FALSEY


def njit(fn):
    """Compile ``fn`` with numba when it is importable, else return it unchanged.

    Compilation does not depend on ``USE_NUMBA`` so both paths stay callable
    side by side (tests and the benchmark compare them).
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
