"""Compiled vs pure-Python kernels: wall time and bit-identity.

    python benchmarks/bench_kernels.py --n 65536 --repeat 5
"""
import argparse
import time

import numpy as np

from loctime import _backend
from loctime.localtime import LevelSpec, occupation_local_time, tanaka_local_time
from loctime.sde import PathGrid, SdeModel, simulate


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2 ** 16, help="time steps per path")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    model = SdeModel.custom("0.5*(1 - x)", "0.3*sqrt(1 + x^2)", 0.0)
    grid = PathGrid(1.0, args.n)
    spec = LevelSpec(0.0, 0.02, "right")
    cases = {
        "euler": lambda: simulate(model, grid, 42).values,
        "occupation": lambda p: occupation_local_time(p, spec).values,
        "tanaka": lambda p: tanaka_local_time(p, 0.0).values,
    }
    backends = _backend.available()
    results = {}
    for b in backends:
        with _backend.use(b):
            path = simulate(model, grid, 42)
            for name, fn in cases.items():
                call = fn if name == "euler" else (lambda fn=fn: fn(path))
                results[b, name] = _best(call, args.repeat)

    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<12}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}  identical")
    for name in cases:
        times = [results[b, name][0] for b in backends]
        line = f"{name:<12}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times)
        if len(backends) == 2:
            same = np.array_equal(results["python", name][1], results["compiled", name][1])
            line += f"{times[0] / times[1]:>9.1f}x  {'yes' if same else 'NO'}"
        print(line)
    if len(backends) == 1:
        print("compiled kernels not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
