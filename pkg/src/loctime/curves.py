"""Branches of the zero set ``{V(t, x) = 0, dV/dx != 0}`` as graphs over time.

Each branch is a maximal solution of ``y' = -V_t(s, y) / V_x(s, y)`` grown from
a root seed by classical RK4, with a Newton projection back onto ``V = 0``
after every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprDomainError, Surface

__all__ = [
    "Rectangle", "CurveBranch", "BranchSet", "GrowthFailure",
    "find_seeds", "grow_branch", "extract_branches",
    "ETA_ROOT", "DELTA_START", "DELTA_STOP",
]

ETA_ROOT = 1e-10
DELTA_START = 1e-6
DELTA_STOP = 1e-8


@dataclass(frozen=True)
class Rectangle:
    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float

    def __post_init__(self):
        if not (self.t_hi > self.t_lo and self.x_hi > self.x_lo):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def merge_tol(self) -> float:
        return 1e-6 * (self.x_hi - self.x_lo)


class GrowthFailure(ValueError):
    """Seed does not satisfy the growth preconditions."""


@dataclass(frozen=True, eq=False)
class CurveBranch:
    """Samples ``phi`` of one branch at ``times`` (RK4 nodes, increasing)."""

    times: np.ndarray
    phi: np.ndarray
    slope: np.ndarray
    dvx_sign: int
    start_reason: str
    end_reason: str
    surface: Surface = field(repr=False, default=None)

    @property
    def t_a(self) -> float:
        return float(self.times[0])

    @property
    def t_b(self) -> float:
        return float(self.times[-1])

    def __call__(self, s, polish: int = 1) -> np.ndarray:
        """Cubic Hermite interpolation (slopes from the ODE), then ``polish``
        Newton steps on ``V(s, .) = 0``. NaN outside ``[t_a, t_b]``."""
        s = np.asarray(s, dtype=float)
        out = np.full(s.shape, np.nan)
        inside = (s >= self.t_a) & (s <= self.t_b)
        if not inside.any():
            return out
        si = s[inside]
        if len(self.times) == 1:
            out[inside] = self.phi[0]
            return out
        k = np.clip(np.searchsorted(self.times, si, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        h = t1 - t0
        u = (si - t0) / h
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u * u * (3 - 2 * u)
        h11 = u * u * (u - 1)
        y = (h00 * self.phi[k] + h10 * h * self.slope[k]
             + h01 * self.phi[k + 1] + h11 * h * self.slope[k + 1])
        exact = si == t1
        y[exact] = self.phi[k + 1][exact]
        exact = si == t0
        y[exact] = self.phi[k][exact]
        if polish and self.surface is not None:
            V = self.surface
            for _ in range(polish):
                d = V.dx(si, y)
                ok = np.abs(d) >= DELTA_STOP
                y = np.where(ok, y - V(si, y) / np.where(ok, d, 1.0), y)
        out[inside] = y
        return out

    def on_grid(self, times: np.ndarray) -> np.ndarray:
        """Branch values at the nodes ``times`` (NaN outside the interval)."""
        return self(times)


@dataclass(frozen=True, eq=False)
class BranchSet:
    branches: tuple
    rectangle: Rectangle
    failures: tuple = ()

    def __len__(self):
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)

    def __getitem__(self, k):
        return self.branches[k]

    def to_csv(self, fh) -> None:
        fh.write("branch_id,t,phi,dvx_sign\n")
        for k, b in enumerate(self.branches):
            for t, y in zip(b.times, b.phi):
                fh.write(f"{k},{float(t)!r},{float(y)!r},{b.dvx_sign}\n")

    def min_separation(self) -> float:
        """Smallest distance between two branches over common times."""
        best = math.inf
        for i, a in enumerate(self.branches):
            for b in self.branches[i + 1:]:
                lo, hi = max(a.t_a, b.t_a), min(a.t_b, b.t_b)
                if lo > hi:
                    continue
                ts = np.union1d(a.times[(a.times >= lo) & (a.times <= hi)],
                                b.times[(b.times >= lo) & (b.times <= hi)])
                if ts.size:
                    best = min(best, float(np.min(np.abs(a(ts, 0) - b(ts, 0)))))
        return best


# ---------------------------------------------------------------------- seeds

def _bisect(f, a, b, fa):
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return a if abs(fa) <= abs(f(b)) else b


def find_seeds(V: Surface, t: float, x_range, nx: int,
               eta_root: float = ETA_ROOT, delta: float = DELTA_STOP):
    """Roots of ``V(t, .)`` on ``x_range`` with ``|V_x| >= delta``.

    Returns ``[(x_root, dvx_sign), ...]`` in increasing ``x``.
    """
    if nx < 2:
        raise ValueError("nx must be >= 2")
    lo, hi = x_range
    xs = np.linspace(lo, hi, nx)
    f = lambda x: V.f(t, x)
    vals = [f(x) for x in xs]
    roots = []
    for j in range(nx):
        if vals[j] == 0.0:
            roots.append(xs[j])
        elif j + 1 < nx and vals[j + 1] != 0.0 and (vals[j] < 0) != (vals[j + 1] < 0):
            roots.append(_bisect(f, xs[j], xs[j + 1], vals[j]))
    out = []
    for r in roots:
        if abs(f(r)) >= eta_root:
            continue
        d = V.f_x(t, r)
        if abs(d) < delta:
            continue
        out.append((float(r), 1 if d > 0 else -1))
    return out


# --------------------------------------------------------------------- growth

class _Stop(Exception):
    def __init__(self, reason):
        self.reason = reason


def _rhs(V, s, y, sign):
    try:
        d = V.f_x(s, y)
        if abs(d) < DELTA_STOP or (d > 0) != (sign > 0):
            raise _Stop("dvx-vanishing")
        return -V.f_t(s, y) / d
    except ExprDomainError:
        raise _Stop("dvx-vanishing") from None


def _march(V, t0, x0, t_end, h, sign, rect, project):
    """March from ``(t0, x0)`` to ``t_end``; returns times, values, slopes, reason."""
    direction = 1.0 if t_end >= t0 else -1.0
    ts, ys, ds = [], [], []
    t, y = t0, x0
    reason = "domain-edge"
    k = 0
    while (t_end - t) * direction > 0:
        k += 1
        # nodes are t0 + k*h (no accumulated drift); the last one lands on the edge
        t_new = t0 + direction * k * h
        if (t_end - t_new) * direction <= 1e-12 * max(1.0, abs(t_end)):
            t_new = t_end
        step = t_new - t
        try:
            k1 = _rhs(V, t, y, sign)
            k2 = _rhs(V, t + step / 2, y + step / 2 * k1, sign)
            k3 = _rhs(V, t + step / 2, y + step / 2 * k2, sign)
            k4 = _rhs(V, t_new, y + step * k3, sign)
            y_new = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if project:
                y_new = _project(V, t_new, y_new, sign)
            slope = _rhs(V, t_new, y_new, sign)
        except _Stop as stop:
            reason = stop.reason
            break
        if not (rect.x_lo <= y_new <= rect.x_hi):
            reason = "x-range-exit"
            break
        t, y = t_new, y_new
        ts.append(t)
        ys.append(y)
        ds.append(slope)
    return ts, ys, ds, reason


def _project(V, t, y, sign, max_iter=6):
    """Newton correction of ``y`` onto ``V(t, .) = 0``; one step normally
    suffices, a few more are allowed before declaring divergence."""
    for i in range(max_iter):
        try:
            d = V.f_x(t, y)
            if abs(d) < DELTA_STOP or (d > 0) != (sign > 0):
                raise _Stop("dvx-vanishing")
            y = y - V.f(t, y) / d
            r = V.f(t, y)
        except ExprDomainError:
            raise _Stop("newton-divergence") from None
        if not math.isfinite(y):
            raise _Stop("newton-divergence")
        if abs(r) < ETA_ROOT:
            return y
    raise _Stop("newton-divergence")


def grow_branch(V: Surface, seed, rect: Rectangle, h: float = 1e-3,
                project: bool = True) -> CurveBranch:
    """Continue the branch through ``seed = (t0, x0)`` forward and backward
    across ``rect``. ``project=False`` disables the Newton correction
    (plain RK4, used to measure the integrator order)."""
    t0, x0 = float(seed[0]), float(seed[1])
    if abs(V.f(t0, x0)) >= ETA_ROOT:
        raise GrowthFailure(f"seed ({t0}, {x0}) is not on the zero set")
    d0 = V.f_x(t0, x0)
    if abs(d0) < DELTA_START:
        raise GrowthFailure(f"|dV/dx| = {abs(d0):.3g} below start threshold at seed")
    if not (rect.t_lo <= t0 <= rect.t_hi and rect.x_lo <= x0 <= rect.x_hi):
        raise GrowthFailure("seed outside rectangle")
    sign = 1 if d0 > 0 else -1
    slope0 = _rhs(V, t0, x0, sign)
    fts, fys, fds, end_reason = _march(V, t0, x0, rect.t_hi, h, sign, rect, project)
    bts, bys, bds, start_reason = _march(V, t0, x0, rect.t_lo, h, sign, rect, project)
    times = np.array(bts[::-1] + [t0] + fts)
    phi = np.array(bys[::-1] + [x0] + fys)
    slope = np.array(bds[::-1] + [slope0] + fds)
    return CurveBranch(times, phi, slope, sign, start_reason, end_reason, V)


# ----------------------------------------------------------------- extraction

def _covered(branch: CurveBranch, t: float, x: float, tol: float) -> bool:
    if not (branch.t_a <= t <= branch.t_b):
        return False
    return abs(float(branch(np.array([t]))[0]) - x) <= tol


def _coincide(a: CurveBranch, b: CurveBranch, tol: float) -> bool:
    lo, hi = max(a.t_a, b.t_a), min(a.t_b, b.t_b)
    if lo > hi or a.dvx_sign != b.dvx_sign:
        return False
    ts = np.linspace(lo, hi, 17)
    return bool(np.max(np.abs(a(ts) - b(ts))) <= tol)


def extract_branches(V: Surface, rect: Rectangle, n_seed_times: int = 21,
                     nx: int = 401, h: float = 1e-3) -> BranchSet:
    """Seed at ``n_seed_times`` uniform times, grow, merge coincident curves.

    Seeds already lying on a grown branch are not regrown; growth failures are
    collected in ``failures`` instead of raising.
    """
    tol = rect.merge_tol
    grown: list[CurveBranch] = []
    failures = []
    for t in np.linspace(rect.t_lo, rect.t_hi, max(int(n_seed_times), 1)):
        t = float(t)
        for x, _ in find_seeds(V, t, (rect.x_lo, rect.x_hi), nx):
            if any(_covered(b, t, x, tol) for b in grown):
                continue
            try:
                grown.append(grow_branch(V, (t, x), rect, h))
            except (GrowthFailure, ExprDomainError) as exc:
                failures.append(((t, x), str(exc)))
    grown.sort(key=lambda b: (b.t_a, float(b.phi[0])))
    merged: list[CurveBranch] = []
    for b in grown:
        for j, m in enumerate(merged):
            if _coincide(m, b, tol):
                if (b.t_b - b.t_a) > (m.t_b - m.t_a):
                    merged[j] = b
                break
        else:
            merged.append(b)
    return BranchSet(tuple(merged), rect, tuple(failures))
