"""Kernel backend selection.

The compiled extension ``loctime._kernels`` is used when it imports; otherwise
the numpy/Python fallback runs. Set ``LOCTIME_BACKEND=python`` to force the
fallback.
"""
import os
from contextlib import contextmanager

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_impl = _fallback if (_compiled is None or os.environ.get("LOCTIME_BACKEND") == "python") else _compiled


def name() -> str:
    return "compiled" if _impl is _compiled else "python"


def available() -> list:
    return ["python"] + (["compiled"] if _compiled is not None else [])


@contextmanager
def use(backend: str):
    """Temporarily switch backend (``"python"`` or ``"compiled"``)."""
    global _impl
    if backend == "compiled" and _compiled is None:
        raise RuntimeError("compiled kernels are not built")
    old = _impl
    _impl = _compiled if backend == "compiled" else _fallback
    try:
        yield
    finally:
        _impl = old


def euler(mu_prog, sig_prog, mu_f, sig_f, x0, T, n, z, values, qv, drift):
    return _impl.euler(mu_prog, sig_prog, mu_f, sig_f, x0, T, n,
                       np.ascontiguousarray(z, dtype=float), values, qv, drift)


def window_cumsum(y, w, lo, hi, mode):
    y = np.ascontiguousarray(y, dtype=float)
    w = np.ascontiguousarray(np.broadcast_to(w, y.shape), dtype=float)
    out = np.empty(y.shape[0] + 1)
    _impl.window_cumsum(y, w, float(lo), float(hi), int(mode), out)
    return out


def tanaka_cumsum(x, a):
    x = np.ascontiguousarray(x, dtype=float)
    out = np.empty(x.shape[0])
    _impl.tanaka_cumsum(x, float(a), out)
    return out
