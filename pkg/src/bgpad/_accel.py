"""Numba switch.

Hot loops live in :mod:`bgpad.kernels` in two flavours: an ``@njit`` kernel
and a pure-numpy twin.  ``BGPAD_DISABLE_NUMBA=1`` (or numba being absent)
selects the numpy twins at import time.
"""

import os

_FALSE = {"", "0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("BGPAD_DISABLE_NUMBA", "").strip().lower() in _FALSE


try:
    if not _numba_requested():
        raise ImportError("numba disabled by BGPAD_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if _njit is not None:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
