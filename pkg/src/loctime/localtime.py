"""Local-time estimators for a discretised path: windowed occupation density,
discrete Tanaka sums, and local time along a sampled curve."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import _backend
from ._fallback import LEFT, OPEN, RIGHT
from .sde import SdePath

__all__ = [
    "LevelSpec", "LocalTimeProcess", "occupation_local_time", "tanaka_local_time",
    "curve_local_time", "one_sided_curve_local_time", "window_bounds",
    "default_epsilon", "curve_span",
]

Side = Literal["right", "left", "symmetric"]


@dataclass(frozen=True)
class LevelSpec:
    level: float
    eps: float
    side: Side = "right"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"window must be positive, got {self.eps}")
        if self.side not in ("right", "left", "symmetric"):
            raise ValueError(f"unknown side {self.side!r}")


def window_bounds(level: float, eps: float, side: str):
    """``(lo, hi, mode)``: right ``[a, a+eps)``, left ``(a-eps, a]``,
    symmetric ``(a-eps/2, a+eps/2)``."""
    if side == "right":
        return level, level + eps, RIGHT
    if side == "left":
        return level - eps, level, LEFT
    if side == "symmetric":
        return level - eps / 2, level + eps / 2, OPEN
    raise ValueError(f"unknown side {side!r}")


@dataclass(frozen=True, eq=False)
class LocalTimeProcess:
    """Cumulative local time on grid nodes.

    ``raw`` starts at zero at ``times[0]``; the exposed ``values`` are
    re-based so that they vanish at ``times[base_index]`` (negative before it).
    ``clip`` is the largest monotonicity correction applied.
    """

    times: np.ndarray
    raw: np.ndarray
    base_index: int = 0
    clip: float = 0.0

    @property
    def values(self) -> np.ndarray:
        if self.base_index == 0:
            return self.raw
        return self.raw - self.raw[self.base_index]

    @property
    def base_time(self) -> float:
        return float(self.times[self.base_index])

    def _index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="left"))
        return min(max(k, 0), len(self.times) - 1)

    def value_at(self, t: float) -> float:
        """Value at ``t``: the sum over grid steps starting strictly before ``t``."""
        if t <= self.times[0]:
            return float(self.values[0])
        return float(self.values[self._index(t)])

    def increment(self, t1: float, t2: float) -> float:
        """Base-point free increment over ``[t1, t2]`` clipped to the domain."""
        k1 = 0 if t1 <= self.times[0] else self._index(t1)
        k2 = 0 if t2 <= self.times[0] else self._index(t2)
        return float(self.raw[k2] - self.raw[k1])

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def to_csv(self, fh) -> None:
        fh.write("t,local_time\n")
        for t, v in zip(self.times, self.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def _occupation(y, w, lo, hi, mode, eps):
    return _backend.window_cumsum(y, w, lo, hi, mode) / eps


def occupation_local_time(path: SdePath, spec: LevelSpec) -> LocalTimeProcess:
    """``(1/eps) * sum_{t_i < t} 1{x_i in window} * qv_i``."""
    lo, hi, mode = window_bounds(spec.level, spec.eps, spec.side)
    raw = _occupation(path.values[:-1], path.qv, lo, hi, mode, spec.eps)
    return LocalTimeProcess(path.times, raw)


def tanaka_local_time(path: SdePath, a: float) -> LocalTimeProcess:
    """Discrete Tanaka estimator
    ``|x_k - a| - |x_0 - a| - sum_{i<k} sgn(x_i - a) (x_{i+1} - x_i)``
    with ``sgn(0) = -1``.

    The sum is accumulated step by step in the equivalent crossing form, whose
    terms are nonnegative, so the running-maximum clip is recorded but is zero
    in practice.
    """
    raw = _backend.tanaka_cumsum(path.values, a)
    fixed = np.maximum.accumulate(raw)
    clip = float(np.max(fixed - raw))
    return LocalTimeProcess(path.times, fixed, clip=clip)


def curve_span(curve: np.ndarray) -> tuple[int, int]:
    """First and last grid index where the sampled curve is defined."""
    ok = np.flatnonzero(np.isfinite(curve))
    if ok.size == 0:
        raise ValueError("curve is undefined on the whole grid")
    ia, ib = int(ok[0]), int(ok[-1])
    if ok.size != ib - ia + 1:
        raise ValueError("curve must be defined on a contiguous set of nodes")
    return ia, ib


def _curve_occupation(path, curve, weights, lo, hi, mode, eps):
    curve = np.asarray(curve, dtype=float)
    if curve.shape != path.values.shape:
        raise ValueError("curve must be sampled on the path grid")
    ia, ib = curve_span(curve)
    if ib == ia:
        return ia, ib, np.zeros(1)
    u = path.values[ia:ib] - curve[ia:ib]
    w = path.qv[ia:ib] if weights is None else path.qv[ia:ib] * weights[ia:ib]
    return ia, ib, _occupation(u, w, lo, hi, mode, eps)


def curve_local_time(path: SdePath, curve: np.ndarray, eps: float, side: Side = "right",
                     base_time: float | None = None) -> LocalTimeProcess:
    """Local time of ``path`` at a sampled curve.

    ``curve`` holds ``gamma(t_i)`` on the path grid and NaN outside its
    interval. Values before the base point are negative, so increments over
    any sub-interval do not depend on the base point.
    """
    lo, hi, mode = window_bounds(0.0, eps, side)
    ia, ib, raw = _curve_occupation(path, curve, None, lo, hi, mode, eps)
    times = path.times[ia:ib + 1]
    if base_time is None:
        base = 0
    else:
        if base_time < times[0] - 1e-12 or base_time > times[-1] + 1e-12:
            raise ValueError(f"base point {base_time} outside [{times[0]}, {times[-1]}]")
        base = int(np.argmin(np.abs(times - base_time)))
    return LocalTimeProcess(times, raw, base_index=base)


def one_sided_curve_local_time(path: SdePath, curve: np.ndarray, dvx_sign: int,
                               eps: float) -> LocalTimeProcess:
    """Right window when the surface increases across the curve, left window
    when it decreases."""
    if dvx_sign not in (1, -1):
        raise ValueError("dvx_sign must be +1 or -1")
    return curve_local_time(path, curve, eps, "right" if dvx_sign > 0 else "left")


def default_epsilon(terminal_values, factor: float = 0.02) -> float:
    """``factor`` times the ensemble standard deviation of ``X_T``."""
    sd = float(np.std(np.asarray(terminal_values, dtype=float)))
    if not sd > 0:
        raise ValueError("terminal values have zero spread")
    return factor * sd
