"""Expected exposure ``EE(t) = E[V(t, X_t)^+]`` by Monte Carlo and by the
forward formula along zero-level branches, expected local times from the
transition density, and the credit valuation adjustment ``CVA_0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import gaussian_kde

from .curves import BranchSet
from .cvf import CoverageWarning
from .expr import ExprDomainError, Surface
from .quadrature import integrate_many, integrate_sqrt
from .sde import Ensemble, PathGrid, SdeModel, mix_seed

__all__ = [
    "DensityModel", "ClosedFormDensity", "KdeDensity", "density_for",
    "EEProfile", "ee_mc", "ee_forward", "expected_local_time",
    "MartingaleReport", "martingale_diagnostic", "ForwardFormulaError",
    "DefaultModel", "cva0", "DENSITY_STREAM",
]

# index offset that keeps density paths disjoint from pricing paths
DENSITY_STREAM = 1 << 62

_SQRT2PI = math.sqrt(2 * math.pi)


class ForwardFormulaError(ArithmeticError):
    """The forward formula's hypotheses fail for this model or surface."""


# -------------------------------------------------------------------- density

class DensityModel:
    """Transition density ``q(s, x)`` of ``X_s`` given ``X_0 = x0``."""

    source = "abstract"

    def __call__(self, s, x) -> np.ndarray:
        raise NotImplementedError

    def _spread(self, s: float) -> tuple[float, float]:
        raise NotImplementedError

    def mass(self, s: float, lo: float, hi: float) -> float:
        """``∫_lo^hi q(s, x) dx`` by adaptive quadrature."""
        r = integrate_many(lambda x, k: self(np.full_like(x, s), x), [lo], [hi],
                           epsabs=1e-13, epsrel=1e-11, strict=False)
        return float(r.value[0])

    def box_mass(self, s, lo: float, hi: float) -> np.ndarray:
        """``P(lo <= X_s <= hi)`` at every time in ``s``."""
        return np.array([self.mass(float(v), lo, hi) for v in np.atleast_1d(s)])

    def normalization(self, s: float) -> float:
        c, w = self._spread(s)
        return self.mass(s, c - 40 * w, c + 40 * w)


@dataclass(frozen=True)
class ClosedFormDensity(DensityModel):
    """Gaussian (``family='normal'``) or lognormal law with mean/sd functions of ``s``."""

    model: SdeModel
    source = "closed-form"

    def __post_init__(self):
        if not self.model.closed_form_density:
            raise ValueError(f"no closed-form density for preset {self.model.preset!r}")

    def _moments(self, s):
        m, p, x0 = self.model.preset, self.model.param, self.model.x0
        s = np.asarray(s, dtype=float)
        if m == "brownian":
            return x0 + 0 * s, np.sqrt(s)
        if m == "arithmetic-bm":
            return x0 + p["mu"] * s, abs(p["sigma"]) * np.sqrt(s)
        if m == "ou":
            k, th, sg = p["kappa"], p["theta"], p["sigma"]
            return th + (x0 - th) * np.exp(-k * s), abs(sg) * np.sqrt(-np.expm1(-2 * k * s) / (2 * k))
        # gbm: moments of log X_s
        sg = p["sigma"]
        return math.log(x0) + (p["mu"] - 0.5 * sg * sg) * s, abs(sg) * np.sqrt(s)

    def __call__(self, s, x):
        s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
        mean, sd = self._moments(s)
        out = np.zeros(s.shape)
        if self.model.preset == "gbm":
            ok = (sd > 0) & (x > 0)
            lx = np.log(np.where(x > 0, x, 1.0))
            z = (lx - mean) / np.where(ok, sd, 1.0)
            out[ok] = (np.exp(-0.5 * z * z) / (_SQRT2PI * np.where(ok, sd * x, 1.0)))[ok]
        else:
            ok = sd > 0
            z = (x - mean) / np.where(ok, sd, 1.0)
            out[ok] = (np.exp(-0.5 * z * z) / (_SQRT2PI * np.where(ok, sd, 1.0)))[ok]
        return out

    def box_mass(self, s, lo, hi):
        mean, sd = self._moments(np.atleast_1d(np.asarray(s, dtype=float)))
        if self.model.preset == "gbm":
            lo = math.log(lo) if lo > 0 else -np.inf
            hi = math.log(hi) if hi > 0 else -np.inf
        return ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd)

    def _spread(self, s):
        mean, sd = self._moments(s)
        if self.model.preset == "gbm":
            return 0.0, 0.0
        return float(mean), float(sd)

    def normalization(self, s: float) -> float:
        if self.model.preset != "gbm":
            return super().normalization(s)
        mean, sd = (float(v) for v in self._moments(s))
        # mass in log space, then map back
        r = integrate_many(lambda y, k: self(np.full_like(y, s), np.exp(y)) * np.exp(y),
                           [mean - 40 * sd], [mean + 40 * sd], epsabs=1e-13, epsrel=1e-11,
                           strict=False)
        return float(r.value[0])


@dataclass(frozen=True, eq=False)
class KdeDensity(DensityModel):
    """Gaussian kernel estimate from snapshots of a density ensemble.

    Between snapshot times the two neighbouring estimates are blended
    linearly; before the first snapshot the short-time Gaussian
    ``N(x0, sigma(0, x0)^2 s)`` is used.
    """

    times: np.ndarray
    kernels: tuple
    x0: float
    sigma0: float
    source = "kde"

    @classmethod
    def from_ensemble(cls, model: SdeModel, grid: PathGrid, npaths: int, master_seed: int,
                      n_snapshots: int = 32, threads: int = 1) -> "KdeDensity":
        seed = mix_seed(master_seed, DENSITY_STREAM)
        ens = Ensemble(model, grid, npaths, seed)
        idx = np.unique(np.linspace(0, grid.n, n_snapshots + 1).round().astype(int)[1:])
        snaps = np.array(ens.map(lambda p: p.values[idx], threads=threads))
        kernels = tuple(gaussian_kde(snaps[:, j], bw_method="silverman") for j in range(idx.size))
        sigma0 = float(model.sigma.f(0.0, model.x0))
        return cls(grid.times[idx].copy(), kernels, model.x0, sigma0)

    def bandwidth(self, j: int) -> float:
        k = self.kernels[j]
        return float(math.sqrt(k.covariance[0, 0]))

    def __call__(self, s, x):
        s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
        out = np.zeros(s.shape)
        early = s < self.times[0]
        if early.any():
            # short-time Gaussian blended into the first snapshot
            se, xe = s[early], x[early]
            sd = abs(self.sigma0) * np.sqrt(se)
            g = np.zeros(se.shape)
            ok = sd > 0
            g[ok] = np.exp(-0.5 * ((xe[ok] - self.x0) / sd[ok]) ** 2) / (_SQRT2PI * sd[ok])
            w = se / self.times[0]
            out[early] = (1 - w) * g + w * self.kernels[0](xe)
        late = ~early
        if late.any():
            sl, xl = s[late], x[late]
            j = np.clip(np.searchsorted(self.times, sl, side="right") - 1, 0, len(self.times) - 1)
            res = np.zeros(sl.shape)
            for jj in np.unique(j):
                sel = j == jj
                if jj + 1 < len(self.times):
                    w = (sl[sel] - self.times[jj]) / (self.times[jj + 1] - self.times[jj])
                    res[sel] = (1 - w) * self.kernels[jj](xl[sel]) + w * self.kernels[jj + 1](xl[sel])
                else:
                    res[sel] = self.kernels[jj](xl[sel])
            out[late] = res
        return out

    def box_mass(self, s, lo, hi):
        out = []
        for v in np.atleast_1d(np.asarray(s, dtype=float)):
            if v < self.times[0]:
                out.append(self.kernels[0].integrate_box_1d(lo, hi))
                continue
            j = min(int(np.searchsorted(self.times, v, side="right")) - 1, len(self.times) - 1)
            m = self.kernels[j].integrate_box_1d(lo, hi)
            if j + 1 < len(self.times):
                w = (v - self.times[j]) / (self.times[j + 1] - self.times[j])
                m = (1 - w) * m + w * self.kernels[j + 1].integrate_box_1d(lo, hi)
            out.append(m)
        return np.array(out)

    def _spread(self, s):
        j = int(np.clip(np.searchsorted(self.times, s), 0, len(self.times) - 1))
        d = self.kernels[j].dataset[0]
        return float(np.mean(d)), float(np.std(d)) + self.bandwidth(j)


def density_for(model: SdeModel, grid: PathGrid | None = None, npaths: int = 10_000,
                master_seed: int = 0, threads: int = 1) -> DensityModel:
    """Closed form for presets, kernel estimate otherwise."""
    if model.closed_form_density:
        return ClosedFormDensity(model)
    if grid is None:
        raise ValueError("a grid is required for the kernel density of a custom model")
    return KdeDensity.from_ensemble(model, grid, npaths, master_seed, threads=threads)


# ------------------------------------------------------------------ profiles

@dataclass(frozen=True, eq=False)
class EEProfile:
    times: np.ndarray
    values: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    warnings: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("exposure values must be finite and nonnegative")

    def to_csv(self, fh) -> None:
        fh.write("t,ee,stderr,method\n")
        se = self.stderr if self.stderr is not None else np.full(self.times.size, np.nan)
        for t, v, e in zip(self.times, self.values, se):
            fh.write(f"{float(t)!r},{float(v)!r},{float(e)!r},{self.method}\n")


def _grid_indices(grid: PathGrid, times) -> np.ndarray:
    return np.array([grid.index_of(float(t)) for t in times], dtype=int)


def ee_mc(model: SdeModel, V: Surface, times, npaths: int, master_seed: int,
          grid: PathGrid | None = None, threads: int = 1) -> EEProfile:
    """Ensemble mean of ``max(V(t_j, X_{t_j}), 0)`` with standard errors.

    ``times`` must be nodes of ``grid`` (default: 1024 steps up to ``max(times)``).
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times < 0):
        raise ValueError("times must be nonempty and nonnegative")
    if grid is None:
        grid = PathGrid(float(times.max()) if times.max() > 0 else 1.0, 1024)
    if np.any(times > grid.T * (1 + 1e-12)):
        raise ValueError(f"times exceed the horizon {grid.T}")
    idx = _grid_indices(grid, times)
    tn = grid.times[idx]
    ens = Ensemble(model, grid, npaths, master_seed)
    rows = np.array(ens.map(lambda p: np.maximum(V(tn, p.values[idx]), 0.0), threads=threads))
    mean = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(npaths) if npaths > 1 else np.full(times.size, np.nan)
    return EEProfile(times, mean, "mc", se)


def expected_local_time(model: SdeModel, density: DensityModel, z: float, t: float,
                        epsabs: float = 1e-12, epsrel: float = 1e-11) -> tuple[float, float]:
    """``∫_0^t sigma(s, z)^2 q(s, z) ds`` and its error estimate."""
    if not t > 0:
        raise ValueError("t must be positive")
    if model.sigma.is_zero():
        return 0.0, 0.0

    def g(s, k):
        sg = model.sigma(s, np.full_like(s, z))
        return sg * sg * density(s, np.full_like(s, z))

    r = integrate_sqrt(g, [0.0], [t], epsabs=epsabs, epsrel=epsrel)
    return float(r.value[0]), float(r.error[0])


@dataclass(frozen=True)
class MartingaleReport:
    max_abs: float
    scale: float
    relative: float
    threshold: float = 1e-6

    @property
    def warned(self) -> bool:
        return self.relative > self.threshold


def martingale_diagnostic(model: SdeModel, V: Surface, t_range, x_range,
                          nt: int = 33, nx: int = 65, warn: bool = True) -> MartingaleReport:
    """Generator residual ``V_t + mu V_x + sigma^2 V_xx / 2`` on a grid.

    ``relative`` is ``max|residual|`` over the largest sum of term magnitudes.
    """
    t, x = np.meshgrid(np.linspace(*t_range, nt), np.linspace(*x_range, nx), indexing="ij")
    with np.errstate(all="ignore"):
        try:
            terms = [V.dt(t, x), model.mu(t, x) * V.dx(t, x),
                     0.5 * model.sigma(t, x) ** 2 * V.dxx(t, x)]
        except ExprDomainError as exc:
            raise ValueError(f"cannot evaluate the generator on the region: {exc}") from exc
        res = terms[0] + terms[1] + terms[2]
        mag = np.abs(terms[0]) + np.abs(terms[1]) + np.abs(terms[2])
    ok = np.isfinite(res) & np.isfinite(mag)
    max_abs = float(np.max(np.abs(res[ok]))) if ok.any() else 0.0
    scale = float(np.max(mag[ok])) if ok.any() else 0.0
    rel = max_abs / scale if scale > 0 else 0.0
    rep = MartingaleReport(max_abs, scale, rel)
    if warn and rep.warned:
        warnings.warn(f"V(t, X_t) is not a martingale: relative generator residual {rel:.3g}",
                      RuntimeWarning, stacklevel=2)
    return rep


def ee_forward(model: SdeModel, V: Surface, branches: BranchSet, density: DensityModel,
               times, override: bool = False, gate: float = 1e-3) -> EEProfile:
    """``EE(t) = EE(0) + 1/2 sum_k ∫_0^t sigma^2 |V_x| q (s, phi_k(s)) ds``.

    Integrals are accumulated over consecutive requested times, so the
    profile is nondecreasing exactly. Refuses non-martingale surfaces
    (relative generator residual above ``gate``) unless ``override``.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonempty, nonnegative and sorted")
    if model.sigma.is_zero():
        raise ForwardFormulaError("sigma is identically zero: the law of X_t has no density")
    rect = branches.rectangle
    notes = []
    diag = martingale_diagnostic(model, V, (rect.t_lo, rect.t_hi), (rect.x_lo, rect.x_hi),
                                 warn=False)
    if diag.relative > gate and not override:
        raise ForwardFormulaError(
            f"V(t, X_t) is not a martingale (relative generator residual {diag.relative:.3g} "
            f"> {gate:g}); pass override to compute anyway")
    if diag.warned:
        msg = f"relative generator residual {diag.relative:.3g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if times[-1] > rect.t_hi + 1e-12:
        raise ValueError(f"times exceed the branch rectangle end {rect.t_hi}")
    ts = np.unique(times[times > 0])
    if ts.size:
        inside = density.box_mass(ts, rect.x_lo, rect.x_hi)
        j = int(np.argmax(1.0 - inside))
        if 1.0 - inside[j] > 0.01:
            msg = (f"density mass {1.0 - inside[j]:.3g} outside x in [{rect.x_lo}, {rect.x_hi}] "
                   f"at t={float(ts[j])!r}")
            warnings.warn(msg, CoverageWarning, stacklevel=2)
            notes.append(msg)

    ee0 = max(float(V.f(0.0, model.x0)), 0.0)
    starts = np.concatenate([[0.0], times[:-1]])
    incr = np.zeros(times.size)
    for b in branches:
        lo = np.clip(starts, b.t_a, b.t_b)
        hi = np.clip(times, b.t_a, b.t_b)

        def g(s, k, b=b):
            phi = b(s)
            sg = model.sigma(s, phi)
            return sg * sg * np.abs(V.dx(s, phi)) * density(s, phi)

        incr += integrate_sqrt(g, lo, hi).value
    values = ee0 + 0.5 * np.cumsum(incr)
    return EEProfile(times, values, "forward", None, tuple(notes))


# ----------------------------------------------------------------------- CVA

@dataclass(frozen=True)
class DefaultModel:
    """Law of the default time on ``[0, T]``; mass beyond ``T`` means no default.

    ``kind`` is ``exponential`` (rate ``lam``), ``uniform``, or ``samples``
    (piecewise-linear CDF through ``(cdf_t, cdf_p)``).
    """

    kind: str
    T: float
    lam: float = 1.0
    alpha: float = 1.0
    cdf_t: tuple = ()
    cdf_p: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.kind == "exponential":
            if not self.lam > 0:
                raise ValueError("default intensity must be positive")
        elif self.kind == "samples":
            t, p = np.asarray(self.cdf_t, float), np.asarray(self.cdf_p, float)
            if t.size < 2 or t.size != p.size:
                raise ValueError("CDF samples need matching times and probabilities")
            if np.any(np.diff(t) <= 0) or np.any(np.diff(p) < 0):
                raise ValueError("CDF samples must be increasing in t and nondecreasing in p")
            if p[0] < 0 or p[-1] > 1:
                raise ValueError("CDF values must lie in [0, 1]")
        elif self.kind != "uniform":
            raise ValueError(f"unknown default model {self.kind!r}")

    def cdf(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        if self.kind == "exponential":
            return -np.expm1(-self.lam * t)
        if self.kind == "uniform":
            return t / self.T
        return np.interp(t, self.cdf_t, self.cdf_p, left=0.0)


def cva0(ee: EEProfile, default: DefaultModel, min_points: int = 32) -> float:
    """``alpha * ∫_0^T EE dP_tau`` by the trapezoidal rule on the CDF increments.

    Written in summation-by-parts form so that a constant profile integrates
    to ``c * (F(T) - F(0))`` without rounding.
    """
    t = np.asarray(ee.times, dtype=float)
    if t.size < min_points:
        raise ValueError(f"exposure grid too coarse: {t.size} < {min_points} points")
    T = default.T
    if t[0] > 1e-12 * T or abs(t[-1] - T) > 1e-9 * T:
        raise ValueError(f"exposure grid must cover [0, {T}]")
    if default.alpha == 0:
        return 0.0
    F = default.cdf(t)
    m = 0.5 * (ee.values[1:] + ee.values[:-1])
    total = m[-1] * F[-1] - m[0] * F[0] - math.fsum(F[1:-1] * np.diff(m))
    return float(default.alpha * total)
