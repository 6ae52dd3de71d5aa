"""Euler-Maruyama simulation of one-dimensional SDEs ``dX = mu dt + sigma dW``.

Random numbers
--------------
Path ``seed`` keys a Philox-4x64 counter-based generator; the ``i``-th normal
draw of a path is the ``i``-th ``standard_normal`` output of
``Generator(Philox(key=seed))``, a pure function of ``(seed, i)``. Ensemble
member ``i`` uses ``mix_seed(master_seed, i)`` (SplitMix64 finaliser applied
to ``master_seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64``), so results never
depend on how many workers run the paths.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _backend
from .expr import ExprDomainError, Surface, bytecode, evaluate, parse

__all__ = [
    "SdeModel", "PathGrid", "SdePath", "Ensemble", "SimulationError",
    "simulate", "simulate_ensemble", "quadratic_variation", "realized_variance",
    "mix_seed", "normals", "write_ensemble", "read_ensemble", "ensemble_csv",
]

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SimulationError(ArithmeticError):
    """A path produced a non-finite value, a negative sigma or a domain error."""

    def __init__(self, message: str, step: int | None = None, path_index: int | None = None):
        self.step = step
        self.path_index = path_index
        self.reason = message
        where = []
        if path_index is not None:
            where.append(f"path {path_index}")
        if step is not None:
            where.append(f"step {step}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def mix_seed(master_seed: int, index: int) -> int:
    """SplitMix64 finaliser of ``master_seed + (index + 1) * golden``."""
    z = (int(master_seed) + (int(index) + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def normals(seed: int, n: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64)).standard_normal(n)


@dataclass(frozen=True)
class PathGrid:
    """Uniform grid ``t_i = T * i / n`` on ``[0, T]``."""

    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"steps must be a positive integer, got {self.n}")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @cached_property
    def times(self) -> np.ndarray:
        out = self.T * np.arange(self.n + 1) / self.n
        out.flags.writeable = False
        return out

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``t`` (within ``tol * T``)."""
        k = int(round(t / self.T * self.n))
        if k < 0 or k > self.n or abs(self.T * k / self.n - t) > tol * self.T:
            raise ValueError(f"time {t} is not a node of {self}")
        return k


@dataclass(frozen=True)
class SdeModel:
    mu: Surface
    sigma: Surface
    x0: float
    preset: str = "custom"
    params: tuple = ()

    @property
    def closed_form_density(self) -> bool:
        return self.preset in ("brownian", "arithmetic-bm", "gbm", "ou")

    @property
    def param(self) -> dict:
        return dict(self.params)

    @property
    def descriptor(self) -> str:
        if self.preset == "custom":
            return f"custom(mu={self.mu.text}; sigma={self.sigma.text}; x0={self.x0!r})"
        args = ", ".join(f"{k}={v!r}" for k, v in self.params)
        return f"{self.preset}({args}{', ' if args else ''}x0={self.x0!r})"

    @classmethod
    def brownian(cls, x0: float = 0.0) -> "SdeModel":
        return cls(Surface.constant(0.0), Surface.constant(1.0), float(x0), "brownian")

    @classmethod
    def arithmetic_bm(cls, mu: float, sigma: float, x0: float = 0.0) -> "SdeModel":
        _check_sigma(sigma)
        return cls(Surface.constant(mu), Surface.constant(sigma), float(x0),
                   "arithmetic-bm", (("mu", float(mu)), ("sigma", float(sigma))))

    @classmethod
    def gbm(cls, mu: float, sigma: float, x0: float = 1.0) -> "SdeModel":
        _check_sigma(sigma)
        if x0 <= 0:
            raise ValueError("gbm needs x0 > 0")
        m = Surface.from_expression(parse(f"({float(mu)!r})*x"))
        s = Surface.from_expression(parse(f"({float(sigma)!r})*x"))
        return cls(m, s, float(x0), "gbm", (("mu", float(mu)), ("sigma", float(sigma))))

    @classmethod
    def ou(cls, kappa: float, theta: float, sigma: float, x0: float = 0.0) -> "SdeModel":
        _check_sigma(sigma)
        if kappa <= 0:
            raise ValueError("ou needs kappa > 0")
        m = Surface.from_expression(parse(f"({float(kappa)!r})*(({float(theta)!r}) - x)"))
        return cls(m, Surface.constant(sigma), float(x0), "ou",
                   (("kappa", float(kappa)), ("theta", float(theta)), ("sigma", float(sigma))))

    @classmethod
    def custom(cls, mu: str, sigma: str, x0: float) -> "SdeModel":
        return cls(Surface.from_text(mu), Surface.from_text(sigma), float(x0), "custom")


def _check_sigma(sigma):
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be finite and nonnegative, got {sigma}")


@dataclass(frozen=True, eq=False)
class SdePath:
    """One discretised trajectory. ``qv[i] = sigma(t_i, x_i)**2 * dt`` and
    ``drift[i] = mu(t_i, x_i) * dt`` for ``i < n``."""

    grid: PathGrid
    values: np.ndarray
    qv: np.ndarray
    drift: np.ndarray
    seed: int

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def cumulative_qv(self) -> np.ndarray:
        out = np.zeros(self.grid.n + 1)
        np.cumsum(self.qv, out=out[1:])
        return out


def _steps_before(grid: PathGrid, t: float) -> int:
    if t < 0 or t > grid.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {grid.T}]")
    return int(np.searchsorted(grid.times[:-1], t, side="left"))


def quadratic_variation(path: SdePath, t: float) -> float:
    """Model-based quadratic variation ``sum_{t_i < t} sigma(t_i, x_i)**2 dt``."""
    return math.fsum(path.qv[:_steps_before(path.grid, t)])


def realized_variance(path: SdePath, t: float) -> float:
    """Sum of squared path increments over ``t_i < t`` (cross-check only)."""
    k = _steps_before(path.grid, t)
    return math.fsum(np.diff(path.values[:k + 1]) ** 2)


def simulate(model: SdeModel, grid: PathGrid, seed: int) -> SdePath:
    n, dt, T = grid.n, grid.dt, grid.T
    sqdt = math.sqrt(dt)
    seed = int(seed) & MASK64
    z = normals(seed, n)
    p = model.param
    if model.preset in ("brownian", "arithmetic-bm"):
        mu = p.get("mu", 0.0)
        sig = p.get("sigma", 1.0)
        values = np.empty(n + 1)
        values[0] = model.x0
        inc = mu * dt + sig * (sqdt * z)
        values[1:] = inc
        np.cumsum(values, out=values)
        qv = np.full(n, sig * sig * dt)
        drift = np.full(n, mu * dt)
    elif model.preset == "gbm":
        mu, sig = p["mu"], p["sigma"]
        logs = np.empty(n + 1)
        logs[0] = 0.0
        logs[1:] = (mu - 0.5 * sig * sig) * dt + sig * (sqdt * z)
        np.cumsum(logs, out=logs)
        with np.errstate(over="ignore"):
            values = model.x0 * np.exp(logs)
        values[0] = model.x0
        s = sig * values[:-1]
        qv = s * s * dt
        drift = mu * values[:-1] * dt
    else:
        values, qv, drift = _euler(model, T, n, z)
    bad = ~np.isfinite(values)
    if bad.any():
        raise SimulationError("non-finite value", step=int(np.argmax(bad)))
    return SdePath(grid, values, qv, drift, seed)


def _euler(model: SdeModel, T: float, n: int, z: np.ndarray):
    values = np.empty(n + 1)
    qv = np.empty(n)
    drift = np.empty(n)
    mu_prog = bytecode(model.mu.v)
    sig_prog = bytecode(model.sigma.v)
    status, step = _backend.euler(mu_prog, sig_prog, model.mu.f, model.sigma.f,
                                  float(model.x0), float(T), n, z, values, qv, drift)
    if status == 0:
        return values, qv, drift
    if status == 1:
        # re-evaluate through the tree to name the offending node
        t, x = T * step / n, values[step]
        try:
            _check_point(model, t, x)
        except ExprDomainError as exc:
            raise SimulationError(f"domain error: {exc}", step=step) from exc
        raise SimulationError("domain error", step=step)
    if status == 2:
        raise SimulationError("negative sigma", step=step)
    raise SimulationError("non-finite value", step=step)


def _check_point(model, t, x):
    evaluate(model.mu.v, t, x)
    evaluate(model.sigma.v, t, x)


# ----------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class Ensemble:
    """Lazy, index-addressable ensemble; paths are regenerated on demand."""

    model: SdeModel
    grid: PathGrid
    npaths: int
    master_seed: int

    def __post_init__(self):
        if self.npaths < 1:
            raise ValueError("npaths must be >= 1")

    def seed(self, i: int) -> int:
        return mix_seed(self.master_seed, i)

    @property
    def seeds(self) -> list[int]:
        return [self.seed(i) for i in range(self.npaths)]

    def path(self, i: int) -> SdePath:
        if not 0 <= i < self.npaths:
            raise IndexError(i)
        try:
            return simulate(self.model, self.grid, self.seed(i))
        except SimulationError as exc:
            raise SimulationError(exc.reason, step=exc.step, path_index=i) from exc

    def __len__(self):
        return self.npaths

    def __getitem__(self, i):
        return self.path(i)

    def __iter__(self) -> Iterator[SdePath]:
        return (self.path(i) for i in range(self.npaths))

    def map(self, fn: Callable[[SdePath], object], threads: int = 1) -> list:
        """``[fn(path(i)) for i in range(npaths)]`` computed on ``threads`` workers."""
        def job(i):
            return fn(self.path(i))
        if threads <= 1:
            return [job(i) for i in range(self.npaths)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(self.npaths)))


def simulate_ensemble(model: SdeModel, grid: PathGrid, npaths: int, master_seed: int,
                      threads: int = 1) -> list[SdePath]:
    return Ensemble(model, grid, npaths, master_seed).map(lambda p: p, threads)


# ----------------------------------------------------------------- file I/O

MAGIC = b"LTENSEMB"
VERSION = 1
_HEAD = struct.Struct("<8sI")
_GRID = struct.Struct("<dQQQ")


def write_ensemble(fh, model: SdeModel, grid: PathGrid, master_seed: int,
                   paths: Sequence[SdePath]) -> None:
    """Binary layout (little endian): magic ``LTENSEMB``, u32 version, u32
    descriptor length + UTF-8 descriptor, f64 T, u64 n, u64 npaths, u64
    master_seed, then ``npaths * (n + 1)`` f64 path values."""
    desc = model.descriptor.encode()
    fh.write(_HEAD.pack(MAGIC, VERSION))
    fh.write(struct.pack("<I", len(desc)))
    fh.write(desc)
    fh.write(_GRID.pack(grid.T, grid.n, len(paths), int(master_seed) & MASK64))
    for p in paths:
        fh.write(np.asarray(p.values, dtype="<f8").tobytes())


@dataclass
class EnsembleFile:
    descriptor: str
    grid: PathGrid
    master_seed: int
    values: np.ndarray = field(repr=False)


def read_ensemble(fh) -> EnsembleFile:
    magic, version = _HEAD.unpack(fh.read(_HEAD.size))
    if magic != MAGIC:
        raise ValueError("not an ensemble file")
    if version != VERSION:
        raise ValueError(f"unsupported ensemble version {version}")
    (dlen,) = struct.unpack("<I", fh.read(4))
    desc = fh.read(dlen).decode()
    T, n, npaths, seed = _GRID.unpack(fh.read(_GRID.size))
    data = np.frombuffer(fh.read(8 * npaths * (n + 1)), dtype="<f8")
    return EnsembleFile(desc, PathGrid(T, n), seed, data.reshape(npaths, n + 1).copy())


def ensemble_csv(fh, paths: Sequence[SdePath]) -> None:
    fh.write("path_index,t,x\n")
    for i, p in enumerate(paths):
        for t, x in zip(p.times, p.values):
            fh.write(f"{i},{float(t)!r},{float(x)!r}\n")
