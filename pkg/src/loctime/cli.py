"""Command-line front end.

Every command reads a run configuration (see :mod:`loctime.config`) and
writes CSV and plain-text outputs plus a ``manifest.txt`` into the output
directory. Identical configurations give byte-identical files for any
``--threads`` value.

Exit codes: 0 success or PASS, 1 verification FAIL, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .curves import Rectangle, extract_branches
from .cvf import CvfSettings, verify
from .expr import ExprSyntaxError, Surface
from .exposure import (DefaultModel, EEProfile, ForwardFormulaError, cva0, density_for,
                       ee_forward, ee_mc)
from .localtime import LevelSpec, curve_local_time, occupation_local_time, tanaka_local_time
from .sde import Ensemble, ensemble_csv, write_ensemble

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

BLOCK = 256


class _Run:
    """Shared state of one command invocation."""

    def __init__(self, cfg: RunConfig, out: str, threads: int, command: str):
        self.cfg = cfg
        self.out = out
        self.threads = max(1, int(threads))
        self.command = command
        self.model = cfg.build_model()
        self.grid = cfg.build_grid()
        self.surface = cfg.build_surface()
        os.makedirs(out, exist_ok=True)

    @property
    def ensemble(self) -> Ensemble:
        e = self.cfg.ensemble
        return Ensemble(self.model, self.grid, e.npaths, e.master_seed)

    def horizon(self) -> float:
        h = self.cfg.estimator.horizon
        return self.grid.T if h is None else h

    def rectangle(self, t_hi=None) -> Rectangle:
        e = self.cfg.estimator
        return Rectangle(0.0, self.grid.T if t_hi is None else t_hi, e.x_lo, e.x_hi)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write(self, name: str, text: str) -> None:
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def manifest(self, extra=()) -> str:
        cfg = self.cfg
        rows = [
            ("tool", "loctime"),
            ("version", __version__),
            ("command", self.command),
            ("config_hash", cfg.hash()),
            ("master_seed", str(cfg.ensemble.master_seed)),
            ("model", self.model.descriptor),
            ("surface", self.surface.text),
            ("grid", f"T={self.grid.T!r} n={self.grid.n}"),
            ("npaths", str(cfg.ensemble.npaths)),
        ]
        rows += list(extra)
        text = "".join(f"{k} = {v}\n" for k, v in rows)
        self.write("manifest.txt", text)
        return text

    def blocks(self, fn):
        """``fn(path)`` for every path in index order, computed block-wise."""
        ens = self.ensemble
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            for start in range(0, ens.npaths, BLOCK):
                idx = range(start, min(start + BLOCK, ens.npaths))
                yield from pool.map(lambda i: fn(ens.path(i)), idx)


def _kv(rows) -> str:
    return "".join(f"{k} = {v}\n" for k, v in rows)


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    se = float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan
    return float(np.mean(a)), se


# ------------------------------------------------------------------ commands

def cmd_simulate(run: _Run, args) -> int:
    ens = run.ensemble
    paths = ens.map(lambda p: p, threads=run.threads)
    with open(run.path("ensemble.bin"), "wb") as fh:
        write_ensemble(fh, run.model, run.grid, ens.master_seed, paths)
    files = ["ensemble.bin"]
    if run.cfg.output.csv:
        with open(run.path("paths.csv"), "w", encoding="utf-8", newline="\n") as fh:
            ensemble_csv(fh, paths)
        files.append("paths.csv")
    seeds = [(f"seed[{i}]", str(s)) for i, s in enumerate(ens.seeds)]
    sys.stdout.write(run.manifest([("files", " ".join(files))] + seeds))
    return EXIT_OK


def cmd_localtime(run: _Run, args) -> int:
    e = run.cfg.estimator
    level = e.level if args.level is None else args.level
    eps = e.epsilon if args.eps is None else args.eps
    side = e.side if args.side is None else args.side
    method = e.method if args.method is None else args.method
    curve_text = e.curve if args.curve is None else args.curve
    t = run.horizon()
    times = run.grid.times
    if curve_text is not None:
        if method != "occupation":
            raise ConfigError("[estimator] a curve needs method = occupation")
        gamma = Surface.from_text(RunConfig._expr("estimator", "curve", curve_text))
        curve = gamma(times, np.zeros_like(times))

        def one(p):
            lt = curve_local_time(p, curve, eps, side, e.base_time)
            return lt.values, lt.increment(lt.times[0], t), None, None
    else:
        spec = LevelSpec(level, eps, side)

        def one(p):
            occ = occupation_local_time(p, spec) if method != "tanaka" else None
            tan = tanaka_local_time(p, level) if method != "occupation" else None
            main = occ if occ is not None else tan
            second = tan.value_at(t) if (occ is not None and tan is not None) else None
            return main.values, main.value_at(t), second, (tan.clip if tan is not None else None)

    acc = None
    finals, tanaka, clips = [], [], []
    for values, final, second, clip in run.blocks(one):
        acc = values.copy() if acc is None else acc + values
        finals.append(final)
        if second is not None:
            tanaka.append(second)
        if clip is not None:
            clips.append(clip)
    n = len(finals)
    mean_proc = acc / n
    t_nodes = times if curve_text is None else times[np.isfinite(curve)][: mean_proc.size]
    with open(run.path("localtime.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,local_time\n")
        for tt, v in zip(t_nodes, mean_proc):
            fh.write(f"{float(tt)!r},{float(v)!r}\n")
    with open(run.path("localtime_paths.csv"), "w", encoding="utf-8", newline="\n") as fh:
        if tanaka:
            fh.write("path_index,local_time,tanaka\n")
            for i, (a, b) in enumerate(zip(finals, tanaka)):
                fh.write(f"{i},{float(a)!r},{float(b)!r}\n")
        else:
            fh.write("path_index,local_time\n")
            for i, a in enumerate(finals):
                fh.write(f"{i},{float(a)!r}\n")
    m, se = _mean_se(finals)
    rows = [("method", method), ("level", repr(float(level)) if curve_text is None else "curve"),
            ("curve", curve_text or "none"), ("eps", repr(float(eps))), ("side", side),
            ("t", repr(float(t))), ("npaths", str(n)), ("mean", repr(m)), ("stderr", repr(se))]
    if tanaka:
        tm, tse = _mean_se(tanaka)
        rows += [("tanaka_mean", repr(tm)), ("tanaka_stderr", repr(tse)),
                 ("mean_abs_diff", repr(float(np.mean(np.abs(np.array(finals) - np.array(tanaka))))))]
    if clips:
        rows += [("max_clip", repr(float(max(clips)))), ("median_clip", repr(float(np.median(clips))))]
    text = _kv(rows)
    run.write("summary.txt", text)
    run.manifest()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_branches(run: _Run, args) -> int:
    e = run.cfg.estimator
    V = run.surface.shifted(e.z)
    bs = extract_branches(V, run.rectangle(run.horizon()), e.n_seed_times, e.nx, e.h)
    with open(run.path("branches.csv"), "w", encoding="utf-8", newline="\n") as fh:
        bs.to_csv(fh)
    rows = [("surface", V.text), ("n_branches", str(len(bs)))]
    for k, b in enumerate(bs):
        rows.append((f"branch[{k}]", f"t=[{b.t_a!r},{b.t_b!r}] dvx_sign={b.dvx_sign:+d} "
                                     f"start={b.start_reason} end={b.end_reason}"))
    for seed, why in bs.failures:
        rows.append(("failure", f"seed=({seed[0]!r},{seed[1]!r}) {why}"))
    text = _kv(rows)
    run.write("branches.txt", text)
    run.manifest()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify_cvf(run: _Run, args) -> int:
    e = run.cfg.estimator
    settings = CvfSettings(eps=e.epsilon, x_range=(e.x_lo, e.x_hi), n_seed_times=e.n_seed_times,
                           nx=e.nx, h=e.h, tolerance=e.tolerance, threads=run.threads)
    rep = verify(run.ensemble, run.surface, e.z, run.horizon(), settings)
    text = rep.to_text()
    run.write("cvf_report.txt", text)
    with open(run.path("cvf_paths.csv"), "w", encoding="utf-8", newline="\n") as fh:
        rep.to_csv(fh)
    run.manifest()
    sys.stdout.write(text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _forward(run: _Run, times) -> EEProfile:
    x = run.cfg.exposure
    if run.model.sigma.is_zero():
        raise ForwardFormulaError("sigma is identically zero: the law of X_t has no density")
    bs = extract_branches(run.surface, run.rectangle(), run.cfg.estimator.n_seed_times,
                          run.cfg.estimator.nx, run.cfg.estimator.h)
    dens = density_for(run.model, run.grid, x.density_npaths, run.cfg.ensemble.master_seed,
                       threads=run.threads)
    return ee_forward(run.model, run.surface, bs, dens, times, override=x.override)


def _mc(run: _Run, times) -> EEProfile:
    e = run.cfg.ensemble
    return ee_mc(run.model, run.surface, times, e.npaths, e.master_seed, run.grid, run.threads)


def _write_profile(run: _Run, prof: EEProfile) -> None:
    with open(run.path(f"ee_{prof.method}.csv"), "w", encoding="utf-8", newline="\n") as fh:
        prof.to_csv(fh)


def cmd_ee(run: _Run, args) -> int:
    method = args.method or run.cfg.exposure.method
    times = run.cfg.exposure_times()
    profs = {}
    if method in ("mc", "both"):
        profs["mc"] = _mc(run, times)
    if method in ("forward", "both"):
        profs["forward"] = _forward(run, times)
    for p in profs.values():
        _write_profile(run, p)
    lines = []
    if len(profs) == 2:
        mc, fw = profs["mc"], profs["forward"]
        lines.append(f"{'t':>12} {'ee_mc':>14} {'stderr':>12} {'ee_forward':>14} {'z':>8} within_3se\n")
        for t, a, s, b in zip(times, mc.values, mc.stderr, fw.values):
            z = (b - a) / s if s > 0 else (0.0 if a == b else math.inf)
            lines.append(f"{t:12.6g} {a:14.8g} {s:12.4g} {b:14.8g} {z:8.3f} "
                         f"{'yes' if abs(z) < 3 else 'no'}\n")
    else:
        p = next(iter(profs.values()))
        lines.append(f"{'t':>12} {'ee_' + p.method:>14}\n")
        for t, v in zip(times, p.values):
            lines.append(f"{t:12.6g} {v:14.8g}\n")
    text = "".join(lines)
    run.write("ee_compare.txt", text)
    run.manifest([("ee_method", method)])
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cva(run: _Run, args) -> int:
    x = run.cfg.exposure
    method = "mc" if x.method == "mc" else "forward"
    times = run.cfg.exposure_times()
    prof = _mc(run, times) if method == "mc" else _forward(run, times)
    _write_profile(run, prof)
    dm = DefaultModel(x.default, run.grid.T, x.lam, x.alpha, x.cdf_t, x.cdf_p)
    value = cva0(prof, dm)
    rows = [("cva0", repr(value)), ("alpha", repr(x.alpha)), ("default", x.default)]
    rows.append(("lambda", repr(x.lam)) if x.default == "exponential" else ("T", repr(run.grid.T)))
    rows.append(("ee_method", method))
    text = _kv(rows)
    run.write("cva.txt", text)
    run.manifest([("ee_method", method)])
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "localtime": cmd_localtime,
    "branches": cmd_branches,
    "verify-cvf": cmd_verify_cvf,
    "ee": cmd_ee,
    "cva": cmd_cva,
}


def build_parser() -> argparse.ArgumentParser:
    from . import config
    p = argparse.ArgumentParser(
        prog="loctime",
        description="Local times of V(t, X_t), zero-level branches and expected exposure.",
        epilog=config.__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"loctime {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate an ensemble; writes ensemble.bin and paths.csv",
        "localtime": "local time at a level or curve; writes localtime.csv and summary.txt",
        "branches": "zero-level branches of V; writes branches.csv",
        "verify-cvf": "check the change-of-variable identity; exit 0 iff PASS",
        "ee": "expected exposure by Monte Carlo and/or the forward formula",
        "cva": "CVA_0 from an exposure profile and a default-time law",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", required=True, metavar="PATH", help="run configuration file")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: [output] directory)")
        sp.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker threads; affects speed only (default 1)")
        sp.add_argument("--seed", type=int, metavar="S", help="override [ensemble] master_seed")
        if name == "localtime":
            sp.add_argument("--level", type=float, help="level a (default [estimator] level)")
            sp.add_argument("--eps", type=float, help="window width (default [estimator] epsilon)")
            sp.add_argument("--side", choices=("right", "left", "symmetric"))
            sp.add_argument("--method", choices=("occupation", "tanaka", "both"))
            sp.add_argument("--curve", help="curve gamma(t) as an expression in t")
        if name == "ee":
            sp.add_argument("--method", choices=("mc", "forward", "both"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = args.out or cfg.output.directory
        run = _Run(cfg, out, args.threads, args.command)
        return COMMANDS[args.command](run, args)
    except (ConfigError, ExprSyntaxError) as exc:
        print(f"loctime: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"loctime: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"loctime: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
