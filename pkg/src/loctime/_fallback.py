"""Pure Python / numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and the same floating-point operation order, so both backends
produce bit-identical arrays.
"""
import math

import numpy as np

# window modes: 0 = [lo, hi), 1 = (lo, hi], 2 = (lo, hi)
RIGHT, LEFT, OPEN = 0, 1, 2


def euler(mu_prog, sig_prog, mu_f, sig_f, x0, T, n, z, values, qv, drift):
    """Euler-Maruyama recursion; returns ``(status, step)``.

    status 0 = ok, 1 = domain error, 2 = negative sigma, 3 = non-finite value.
    """
    dt = T / n
    sqdt = math.sqrt(dt)
    x = x0
    values[0] = x
    isfinite = math.isfinite
    z = z.tolist()
    for i in range(n):
        t = T * i / n
        try:
            m = mu_f(t, x)
            s = sig_f(t, x)
        except ArithmeticError:
            return 1, i
        if not (isfinite(m) and isfinite(s)):
            return 3, i
        if s < 0:
            return 2, i
        drift[i] = m * dt
        qv[i] = s * s * dt
        x = x + (m * dt + s * (sqdt * z[i]))
        if not isfinite(x):
            return 3, i + 1
        values[i + 1] = x
    return 0, 0


def window_cumsum(y, w, lo, hi, mode, out):
    """``out[k] = sum_{i<k} w[i] * 1{y[i] in window}`` with ``out[0] = 0``."""
    if mode == RIGHT:
        mask = (y >= lo) & (y < hi)
    elif mode == LEFT:
        mask = (y > lo) & (y <= hi)
    else:
        mask = (y > lo) & (y < hi)
    out[0] = 0.0
    np.cumsum(np.where(mask, w, 0.0), out=out[1:])
    return out


def tanaka_cumsum(x, a, out):
    """Cumulative discrete Tanaka local time at level ``a``.

    Uses the per-step form ``|x_{i+1}-a| - |x_i-a| - sgn(x_i-a)(x_{i+1}-x_i)``,
    which equals ``2 (x_{i+1}-a)^-`` when ``x_i > a`` and ``2 (x_{i+1}-a)^+``
    otherwise.
    """
    d = x[1:] - a
    inc = np.where(x[:-1] > a, 2.0 * np.maximum(-d, 0.0), 2.0 * np.maximum(d, 0.0))
    out[0] = 0.0
    np.cumsum(inc, out=out[1:])
    return out
