"""Run configuration: an INI-style ``key = value`` file with ``[section]`` headers.

Sections and keys (defaults in parentheses)::

    [model]      preset (brownian) | arithmetic-bm | gbm | ou | custom
                 x0 (0; 1 for gbm), mu, sigma, kappa, theta
                 for custom, mu and sigma are expressions in t and x
    [surface]    V (x)                 expression or fixture name
    [grid]       T (1.0), n (1024)
    [ensemble]   npaths (1000), master_seed (20240101)
    [estimator]  epsilon (0.02), level (0), side (right), method (occupation),
                 curve (none), base_time (none), z (0), horizon (T),
                 x_lo (-5), x_hi (5), n_seed_times (21), nx (401), h (0.001),
                 tolerance (0.05)
    [exposure]   times (none) | n_times (64), spacing (uniform | quadratic),
                 method (both), override (false), density_npaths (10000),
                 default (exponential), lambda (1.0), alpha (1.0),
                 cdf_t, cdf_p (comma lists for default = samples)
    [output]     directory (out), csv (true)
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprSyntaxError, Surface
from .sde import PathGrid, SdeModel

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class ModelBlock:
    preset: str = "brownian"
    x0: float | None = None
    mu: str = "0"
    sigma: str = "1"
    kappa: float = 1.0
    theta: float = 0.0


@dataclass(frozen=True)
class GridBlock:
    T: float = 1.0
    n: int = 1024


@dataclass(frozen=True)
class EnsembleBlock:
    npaths: int = 1000
    master_seed: int = 20240101


@dataclass(frozen=True)
class EstimatorBlock:
    epsilon: float = 0.02
    level: float = 0.0
    side: str = "right"
    method: str = "occupation"
    curve: str | None = None
    base_time: float | None = None
    z: float = 0.0
    horizon: float | None = None
    x_lo: float = -5.0
    x_hi: float = 5.0
    n_seed_times: int = 21
    nx: int = 401
    h: float = 1e-3
    tolerance: float = 0.05


@dataclass(frozen=True)
class ExposureBlock:
    times: tuple | None = None
    n_times: int = 64
    spacing: str = "uniform"
    method: str = "both"
    override: bool = False
    density_npaths: int = 10000
    default: str = "exponential"
    lam: float = 1.0
    alpha: float = 1.0
    cdf_t: tuple = ()
    cdf_p: tuple = ()


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    csv: bool = True


@dataclass(frozen=True)
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    surface: str = "x"
    grid: GridBlock = field(default_factory=GridBlock)
    ensemble: EnsembleBlock = field(default_factory=EnsembleBlock)
    estimator: EstimatorBlock = field(default_factory=EstimatorBlock)
    exposure: ExposureBlock = field(default_factory=ExposureBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    # ---------------------------------------------------------- derived objects

    def build_model(self) -> SdeModel:
        m = self.model
        try:
            if m.preset == "brownian":
                return SdeModel.brownian(0.0 if m.x0 is None else m.x0)
            if m.preset == "arithmetic-bm":
                return SdeModel.arithmetic_bm(float(m.mu), float(m.sigma), 0.0 if m.x0 is None else m.x0)
            if m.preset == "gbm":
                return SdeModel.gbm(float(m.mu), float(m.sigma), 1.0 if m.x0 is None else m.x0)
            if m.preset == "ou":
                return SdeModel.ou(m.kappa, m.theta, float(m.sigma), 0.0 if m.x0 is None else m.x0)
            if m.preset == "custom":
                return SdeModel.custom(self._expr("model", "mu", m.mu), self._expr("model", "sigma", m.sigma),
                                       0.0 if m.x0 is None else m.x0)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[model]: {exc}") from exc
        raise ConfigError(f"[model] preset: unknown preset {m.preset!r}")

    @staticmethod
    def _expr(section, key, text):
        try:
            Surface.from_text(text)
        except ExprSyntaxError as exc:
            raise ConfigError(f"[{section}] {key}: {exc.message} at offset {exc.offset} in {text!r}") from exc
        return text

    def build_surface(self) -> Surface:
        return Surface.from_text(self._expr("surface", "V", self.surface))

    def build_grid(self) -> PathGrid:
        try:
            return PathGrid(self.grid.T, self.grid.n)
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from exc

    def exposure_times(self) -> np.ndarray:
        e = self.exposure
        if e.times is not None:
            return np.array(sorted(e.times), dtype=float)
        u = np.arange(e.n_times + 1) / e.n_times
        return self.grid.T * (u * u if e.spacing == "quadratic" else u)

    def hash(self) -> str:
        """SHA-256 of the canonical effective configuration."""
        flat = []

        def walk(prefix, obj):
            if dataclasses.is_dataclass(obj):
                for f in dataclasses.fields(obj):
                    walk(f"{prefix}{f.name}.", getattr(obj, f.name))
            else:
                flat.append(f"{prefix[:-1]}={obj!r}")

        walk("", self)
        return hashlib.sha256("\n".join(flat).encode()).hexdigest()


# ------------------------------------------------------------------ parsing

_SECTIONS = {"model", "surface", "grid", "ensemble", "estimator", "exposure", "output"}


def _get(sec, key, conv, default, name):
    if key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {key}: cannot read {raw!r} ({exc})") from None


def _opt_float(s):
    return None if s.lower() in ("", "none") else float(s)


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _block(cls, sec, name, aliases=None):
    aliases = aliases or {}
    known = {f.name for f in dataclasses.fields(cls)} | set(aliases)
    for key in sec:
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
    kw = {}
    for f in dataclasses.fields(cls):
        key = next((k for k, v in aliases.items() if v == f.name), f.name)
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        t = f.type
        if t in ("float",):
            conv = float
        elif t == "int":
            conv = _int
        elif t == "bool":
            conv = _bool
        elif t == "float | None":
            conv = _opt_float
        elif t in ("tuple", "tuple | None"):
            conv = _floats
        elif t == "str | None":
            conv = lambda s: None if s.lower() in ("", "none") else s
        else:
            conv = str
        kw[f.name] = _get(sec, key, conv, default, name)
    return cls(**kw)


def parse_config(text: str, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for s in cp.sections():
        if s not in _SECTIONS:
            raise ConfigError(f"unknown section [{s}]")
    sec = lambda n: cp[n] if cp.has_section(n) else {}
    surf = sec("surface")
    for key in surf:
        if key != "V":
            raise ConfigError(f"[surface] unknown key {key!r}")
    cfg = RunConfig(
        model=_block(ModelBlock, sec("model"), "model"),
        surface=surf["V"].strip() if "V" in surf else "x",
        grid=_block(GridBlock, sec("grid"), "grid"),
        ensemble=_block(EnsembleBlock, sec("ensemble"), "ensemble"),
        estimator=_block(EstimatorBlock, sec("estimator"), "estimator"),
        exposure=_block(ExposureBlock, sec("exposure"), "exposure", {"lambda": "lam"}),
        output=_block(OutputBlock, sec("output"), "output"),
    )
    if seed is not None:
        cfg = dataclasses.replace(cfg, ensemble=dataclasses.replace(cfg.ensemble, master_seed=seed))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    e, x, ens = cfg.estimator, cfg.exposure, cfg.ensemble
    if cfg.grid.T <= 0 or cfg.grid.n < 1:
        raise ConfigError("[grid] T must be positive and n >= 1")
    if ens.npaths < 1:
        raise ConfigError("[ensemble] npaths must be >= 1")
    if not 0 <= ens.master_seed < 2 ** 64:
        raise ConfigError("[ensemble] master_seed must be in [0, 2^64)")
    if e.epsilon <= 0:
        raise ConfigError("[estimator] epsilon must be positive")
    if e.side not in ("right", "left", "symmetric"):
        raise ConfigError(f"[estimator] side: unknown side {e.side!r}")
    if e.method not in ("occupation", "tanaka", "both"):
        raise ConfigError(f"[estimator] method: unknown method {e.method!r}")
    if e.x_hi <= e.x_lo:
        raise ConfigError("[estimator] x_hi must exceed x_lo")
    if e.n_seed_times < 1 or e.nx < 2 or e.h <= 0:
        raise ConfigError("[estimator] need n_seed_times >= 1, nx >= 2, h > 0")
    if e.horizon is not None and not 0 < e.horizon <= cfg.grid.T:
        raise ConfigError("[estimator] horizon must lie in (0, T]")
    if x.method not in ("mc", "forward", "both"):
        raise ConfigError(f"[exposure] method: unknown method {x.method!r}")
    if x.spacing not in ("uniform", "quadratic"):
        raise ConfigError(f"[exposure] spacing: unknown spacing {x.spacing!r}")
    if x.n_times < 1:
        raise ConfigError("[exposure] n_times must be >= 1")
    if x.default not in ("exponential", "uniform", "samples"):
        raise ConfigError(f"[exposure] default: unknown default model {x.default!r}")
    if x.times is not None and any(t < 0 or t > cfg.grid.T for t in x.times):
        raise ConfigError("[exposure] times must lie in [0, T]")
    cfg.build_surface()
    if e.curve is not None:
        cfg._expr("estimator", "curve", e.curve)
    cfg.build_model()


def load_config(path: str, seed: int | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_config(text, seed)
