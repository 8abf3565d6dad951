"""Numba toggle.

Set ``DEEPLCC_DISABLE_NUMBA=1`` before import to run every kernel through its
pure-numpy implementation. Numba being absent has the same effect.
"""

import os

_FLAG = os.environ.get("DEEPLCC_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    The compiled function is always built when numba exists, so the two
    backends can be compared side by side regardless of ``USE_NUMBA``.
    """
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)
