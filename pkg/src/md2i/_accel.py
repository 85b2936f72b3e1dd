"""Backend selection for the hot numeric kernels.

Set ``MD2I_NO_NUMBA=1`` to force the pure-numpy path. If numba cannot be
imported the numpy path is used as well.
"""
import os

_disabled = os.environ.get("MD2I_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError("numba disabled by MD2I_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def _wrap(f):
            return f

        return _wrap


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
