"""Both sides of the change-of-variable identity for local time at zero of
``Y = V(t, X)``, the time-homogeneous root formula, and ensemble verification.

Left side: occupation estimator of ``L^z(Y)`` with quadratic-variation
increments ``(dV/dx)^2 q_i``. Right side: a sum over zero-level branches of the
one-sided local time of ``X`` at the branch, weighted by ``|dV/dx|`` at the
branch.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .curves import BranchSet, Rectangle, extract_branches
from .expr import Surface
from .localtime import LevelSpec, LocalTimeProcess, occupation_local_time, window_bounds
from .sde import Ensemble, SdePath

__all__ = [
    "cvf_lhs", "cvf_rhs", "cvf_rhs_process", "cvf_localized", "coquet_ouknine_rhs",
    "PreparedBranches", "prepare_branches", "CvfSettings", "CvfReport", "verify",
    "CoverageWarning",
]


class CoverageWarning(UserWarning):
    """Paths or density mass leave the rectangle the branches were traced on."""


def cvf_lhs(path: SdePath, V: Surface, z: float, eps: float) -> LocalTimeProcess:
    """Right-window occupation estimator of ``L^z`` of ``Y_i = V(t_i, x_i)``."""
    if not eps > 0:
        raise ValueError(f"window must be positive, got {eps}")
    t = path.times[:-1]
    x = path.values[:-1]
    y = V(t, x)
    dvx = V.dx(t, x)
    w = dvx * dvx * path.qv
    lo, hi, mode = window_bounds(z, eps, "right")
    raw = _backend.window_cumsum(y, w, lo, hi, mode) / eps
    return LocalTimeProcess(path.times, raw)


@dataclass(frozen=True, eq=False)
class PreparedBranches:
    """Branches resampled on one time grid, with their ``|dV/dx|`` weights.

    ``curves[k]`` is NaN outside branch ``k``; ``spans[k] = (ia, ib)``.
    """

    times: np.ndarray
    curves: tuple
    weights: tuple
    signs: tuple
    spans: tuple
    x_range: tuple

    def __len__(self):
        return len(self.curves)

    def separation(self) -> np.ndarray:
        """Distance to the nearest other branch at every node (inf if alone)."""
        out = np.full((len(self.curves), self.times.size), np.inf)
        for i, a in enumerate(self.curves):
            for j, b in enumerate(self.curves):
                if i != j:
                    d = np.abs(a - b)
                    d[np.isnan(d)] = np.inf
                    out[i] = np.minimum(out[i], d)
        return out


def prepare_branches(branches: BranchSet, V: Surface, times: np.ndarray) -> PreparedBranches:
    curves, weights, signs, spans = [], [], [], []
    for b in branches:
        c = b.on_grid(times)
        ok = np.flatnonzero(np.isfinite(c))
        if ok.size < 2:
            continue
        w = np.zeros_like(c)
        w[ok] = np.abs(V.dx(times[ok], c[ok]))
        curves.append(c)
        weights.append(w)
        signs.append(b.dvx_sign)
        spans.append((int(ok[0]), int(ok[-1])))
    rect = branches.rectangle
    return PreparedBranches(times, tuple(curves), tuple(weights), tuple(signs),
                            tuple(spans), (rect.x_lo, rect.x_hi))


def _prepared(path, branches, V):
    if isinstance(branches, PreparedBranches):
        if branches.times is not path.times and not np.array_equal(branches.times, path.times):
            raise ValueError("prepared branches were sampled on a different grid")
        return branches
    return prepare_branches(branches, V, path.times)


def cvf_rhs_process(path: SdePath, branches, V: Surface, eps: float) -> np.ndarray:
    """Cumulative right-hand side on every grid node (nondecreasing).

    ``branches`` is a :class:`BranchSet` or a :class:`PreparedBranches` for
    ``path``'s grid.
    """
    if not eps > 0:
        raise ValueError(f"window must be positive, got {eps}")
    pb = _prepared(path, branches, V)
    total = np.zeros(path.times.size)
    for c, w, sgn, (ia, ib) in zip(pb.curves, pb.weights, pb.signs, pb.spans):
        u = path.values[ia:ib] - c[ia:ib]
        lo, hi, mode = window_bounds(0.0, eps, "right" if sgn > 0 else "left")
        raw = _backend.window_cumsum(u, path.qv[ia:ib] * w[ia:ib], lo, hi, mode) / eps
        total[ia:ib + 1] += raw
        total[ib + 1:] += raw[-1]
    return total


def _at(times, values, t):
    if t <= times[0]:
        return float(values[0])
    k = min(int(np.searchsorted(times, t, side="left")), times.size - 1)
    return float(values[k])


def cvf_rhs(path: SdePath, branches, V: Surface, t: float, eps: float) -> float:
    """Branch sum of ``|dV/dx(s, phi_k)| dLambda^{phi_k,+}`` over ``(0, t]``."""
    if len(branches) == 0:
        return 0.0
    return _at(path.times, cvf_rhs_process(path, branches, V, eps), t)


def cvf_localized(path: SdePath, branches, V: Surface, t: float, eps: float) -> float:
    """Left-side estimator split by branch: steps with ``0 <= V < eps`` counted
    only within ``y`` of a branch, ``y`` being half the distance to the
    nearest other branch, floored at ``10 eps``."""
    pb = _prepared(path, branches, V)
    k_end = path.times.size - 1 if t >= path.times[-1] else int(np.searchsorted(path.times, t, side="left"))
    ts = path.times[:k_end]
    xs = path.values[:k_end]
    v = V(ts, xs)
    dvx = V.dx(ts, xs)
    base = (v >= 0) & (v < eps)
    sep = pb.separation()
    total = 0.0
    for k, c in enumerate(pb.curves):
        y = np.maximum(0.5 * sep[k, :k_end], 10 * eps)
        d = np.abs(xs - c[:k_end])
        sel = base & (d < y)
        total += math.fsum((dvx[sel] ** 2) * path.qv[:k_end][sel])
    return total / eps


def coquet_ouknine_rhs(path: SdePath, roots, t: float, eps: float) -> float:
    """``sum |phi'(x)| L^x`` with the right local time where ``phi'(x) > 0``
    and the left one ``L^{x-}`` where ``phi'(x) < 0``."""
    total = 0.0
    for x, d in roots:
        if d == 0:
            raise ValueError(f"root {x} has zero derivative")
        spec = LevelSpec(float(x), eps, "right" if d > 0 else "left")
        total += abs(d) * occupation_local_time(path, spec).value_at(t)
    return total


# ------------------------------------------------------------------ verification

@dataclass(frozen=True)
class CvfSettings:
    """Estimator settings; ``x_range`` bounds the branch rectangle ``[0, t] x x_range``."""

    eps: float = 0.02
    x_range: tuple = (-5.0, 5.0)
    n_seed_times: int = 21
    nx: int = 401
    h: float = 1e-3
    tolerance: float = 0.05
    threads: int = 1


@dataclass(frozen=True, eq=False)
class CvfReport:
    lhs: np.ndarray
    rhs: np.ndarray
    surface: str
    z: float
    t: float
    n: int
    settings: CvfSettings
    n_branches: int
    coverage_fraction: float
    warnings: tuple = field(default_factory=tuple)

    @property
    def npaths(self) -> int:
        return int(self.lhs.size)

    @staticmethod
    def _se(a):
        return float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan

    @property
    def mean_lhs(self) -> float:
        return float(np.mean(self.lhs))

    @property
    def mean_rhs(self) -> float:
        return float(np.mean(self.rhs))

    @property
    def se_lhs(self) -> float:
        return self._se(self.lhs)

    @property
    def se_rhs(self) -> float:
        return self._se(self.rhs)

    @property
    def gap(self) -> float:
        mL, mR = self.mean_lhs, self.mean_rhs
        return abs(mL - mR) / max(mL, mR, 1e-12)

    @property
    def correlation(self) -> float:
        if self.lhs.size < 2:
            return math.nan
        if np.array_equal(self.lhs, self.rhs):
            return 1.0
        sl, sr = np.std(self.lhs), np.std(self.rhs)
        if sl == 0 or sr == 0:
            return math.nan
        return float(np.corrcoef(self.lhs, self.rhs)[0, 1])

    @property
    def passed(self) -> bool:
        c = self.correlation
        return self.gap < self.settings.tolerance and (c > 0.5)

    def to_text(self) -> str:
        s = self.settings
        rows = [
            ("status", "PASS" if self.passed else "FAIL"),
            ("surface", self.surface),
            ("z", repr(self.z)),
            ("t", repr(self.t)),
            ("npaths", str(self.npaths)),
            ("n", str(self.n)),
            ("eps", repr(s.eps)),
            ("x_range", f"{s.x_range[0]!r},{s.x_range[1]!r}"),
            ("n_seed_times", str(s.n_seed_times)),
            ("nx", str(s.nx)),
            ("h", repr(s.h)),
            ("n_branches", str(self.n_branches)),
            ("mean_lhs", repr(self.mean_lhs)),
            ("se_lhs", repr(self.se_lhs)),
            ("mean_rhs", repr(self.mean_rhs)),
            ("se_rhs", repr(self.se_rhs)),
            ("gap", repr(self.gap)),
            ("tolerance", repr(s.tolerance)),
            ("correlation", repr(self.correlation)),
            ("coverage_fraction", repr(self.coverage_fraction)),
        ]
        rows += [("warning", w) for w in self.warnings]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    def to_csv(self, fh) -> None:
        fh.write("path_index,lhs,rhs\n")
        for i, (a, b) in enumerate(zip(self.lhs, self.rhs)):
            fh.write(f"{i},{float(a)!r},{float(b)!r}\n")


def verify(ensemble: Ensemble, V: Surface, z: float, t: float,
           settings: CvfSettings = CvfSettings()) -> CvfReport:
    """Evaluate both sides of the identity on every path at horizon ``t``."""
    grid = ensemble.grid
    if not (0 < t <= grid.T + 1e-12):
        raise ValueError(f"horizon {t} outside (0, {grid.T}]")
    Vz = V.shifted(z) if z != 0 else V
    rect = Rectangle(0.0, float(t), float(settings.x_range[0]), float(settings.x_range[1]))
    branches = extract_branches(Vz, rect, settings.n_seed_times, settings.nx, settings.h)
    prepared = prepare_branches(branches, Vz, grid.times)
    lo, hi = rect.x_lo, rect.x_hi
    k_end = grid.index_of(t) if t < grid.T else grid.n

    def one(path):
        left = cvf_lhs(path, V, z, settings.eps).value_at(t)
        right = _at(path.times, cvf_rhs_process(path, prepared, Vz, settings.eps), t) if len(prepared) else 0.0
        xs = path.values[:k_end]
        outside = np.count_nonzero((xs < lo) | (xs > hi)) / max(k_end, 1)
        return left, right, outside

    rows = ensemble.map(one, threads=settings.threads)
    lhs = np.array([r[0] for r in rows])
    rhs = np.array([r[1] for r in rows])
    outside = np.array([r[2] for r in rows])
    notes = []
    bad = int(np.count_nonzero(outside > 0.01))
    if bad:
        msg = f"{bad} path(s) spend more than 1% of steps outside x in [{lo}, {hi}]"
        warnings.warn(msg, CoverageWarning, stacklevel=2)
        notes.append(msg)
    for seed, why in branches.failures:
        notes.append(f"branch growth failed at seed {seed}: {why}")
    return CvfReport(lhs, rhs, Vz.text if z else V.text, float(z), float(t), grid.n, settings,
                     len(branches), float(np.mean(outside)), tuple(notes))
