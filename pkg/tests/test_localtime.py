import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from loctime.localtime import (LevelSpec, LocalTimeProcess, curve_local_time, default_epsilon,
                               occupation_local_time, one_sided_curve_local_time,
                               tanaka_local_time, window_bounds)
from loctime.sde import Ensemble, PathGrid, SdeModel, SdePath, simulate

MEAN_L = math.sqrt(2 / math.pi)          # E|B_1|
SD_L = math.sqrt(1 - 2 / math.pi)        # sd |B_1| = 0.603
N = 10_000


def _path(values, qv=None, T=1.0):
    values = np.asarray(values, dtype=float)
    n = values.size - 1
    g = PathGrid(T, n)
    qv = np.full(n, g.dt) if qv is None else np.asarray(qv, dtype=float)
    return SdePath(g, values, qv, np.zeros(n), 0)


@pytest.fixture(scope="module")
def brownian_finals():
    """Per-path estimators at t=1 for N Brownian paths on 2^16 steps."""
    zero = np.zeros(2 ** 16 + 1)
    right, left, sym = LevelSpec(0, 0.02, "right"), LevelSpec(0, 0.02, "left"), LevelSpec(0, 0.02, "symmetric")

    def one(p):
        return (occupation_local_time(p, right).final, occupation_local_time(p, left).final,
                occupation_local_time(p, sym).final, tanaka_local_time(p, 0.0).final,
                one_sided_curve_local_time(p, zero, +1, 0.02).final,
                one_sided_curve_local_time(p, zero, -1, 0.02).final)

    rows = Ensemble(SdeModel.brownian(), PathGrid(1.0, 2 ** 16), N, 101).map(one, threads=4)
    return {k: np.array(v) for k, v in zip(("right", "left", "sym", "tanaka", "plus", "minus"), zip(*rows))}


# ------------------------------------------------------------ level estimators

def test_window_bounds():
    assert window_bounds(1.0, 0.5, "right")[:2] == (1.0, 1.5)
    assert window_bounds(1.0, 0.5, "left")[:2] == (0.5, 1.0)
    assert window_bounds(1.0, 0.5, "symmetric")[:2] == (0.75, 1.25)
    with pytest.raises(ValueError):
        LevelSpec(0.0, 0.0)
    with pytest.raises(ValueError):
        LevelSpec(0.0, 0.1, "middle")


def test_constant_path_far_from_level():
    p = _path(np.full(101, 5.0))
    for side in ("right", "left", "symmetric"):
        lt = occupation_local_time(p, LevelSpec(0.0, 1.0, side))
        assert np.all(lt.values == 0.0)


def test_window_edges():
    # right window is [a, a+eps), left window is (a-eps, a]
    p = _path([0.0, 0.5, -0.5, 0.25, 1.0], qv=[1.0, 1.0, 1.0, 1.0])
    r = occupation_local_time(p, LevelSpec(0.0, 0.5, "right")).values
    l = occupation_local_time(p, LevelSpec(0.0, 0.5, "left")).values
    assert np.allclose(r, [0, 2, 2, 2, 4])
    assert np.allclose(l, [0, 2, 2, 2, 2])


@given(st.integers(0, 2 ** 32), st.floats(-1, 1), st.floats(0.01, 1),
       st.sampled_from(["right", "left", "symmetric"]))
def test_occupation_matches_direct_sum(seed, a, eps, side):
    p = simulate(SdeModel.custom("0", "1 + 0.5*sin(x)", 0.0), PathGrid(1.0, 200), seed)
    lt = occupation_local_time(p, LevelSpec(a, eps, side))
    x = p.values[:-1]
    lo, hi, _ = window_bounds(a, eps, side)
    inside = {"right": (x >= lo) & (x < hi), "left": (x > lo) & (x <= hi),
              "symmetric": (x > lo) & (x < hi)}[side]
    direct = np.concatenate([[0.0], np.cumsum(np.where(inside, p.qv, 0.0))]) / eps
    assert np.allclose(lt.values, direct, rtol=1e-12, atol=1e-12)
    assert lt.values[0] == 0.0
    assert np.all(np.diff(lt.values) >= 0)
    # support: only steps inside the window add
    grows = np.diff(lt.values) > 0
    assert np.all(np.abs(x[grows] - a) < eps)


def test_occupation_brownian_mean(brownian_finals):
    m = brownian_finals["right"].mean()
    assert abs(m - MEAN_L) < 3 * (SD_L / math.sqrt(N) + 0.05)


def test_right_and_left_means_agree(brownian_finals):
    assert abs(brownian_finals["right"].mean() - brownian_finals["left"].mean()) < 0.02


def test_halving_window_with_refined_grid():
    # the 2^14-step path is the 2^16-step path sampled every 4th node
    def one(p):
        coarse = SdePath(PathGrid(1.0, 2 ** 14), p.values[::4], np.full(2 ** 14, 2.0 ** -14),
                         np.zeros(2 ** 14), p.seed)
        return (occupation_local_time(coarse, LevelSpec(0, 0.04, "symmetric")).final,
                occupation_local_time(p, LevelSpec(0, 0.02, "symmetric")).final)

    rows = np.array(Ensemble(SdeModel.brownian(), PathGrid(1.0, 2 ** 16), 2000, 3).map(one, threads=4))
    assert abs(rows[:, 0].mean() - rows[:, 1].mean()) < 0.02


# ---------------------------------------------------------------------- Tanaka

def test_tanaka_hand_computed():
    lt = tanaka_local_time(_path([0.0, 1.0, -1.0, 0.5]), 0.0)
    assert np.allclose(lt.values, [0, 2, 4, 5])
    assert lt.clip == 0.0


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=60), st.floats(-1, 1))
def test_tanaka_matches_defining_sum(xs, a):
    x = np.array(xs)
    lt = tanaka_local_time(_path(x), a)
    sgn = np.where(x[:-1] - a > 0, 1.0, -1.0)
    direct = np.abs(x - a) - abs(x[0] - a) - np.concatenate([[0.0], np.cumsum(sgn * np.diff(x))])
    assert np.allclose(lt.values, direct, atol=1e-9)
    assert np.all(np.diff(lt.values) >= 0)


def test_tanaka_pure_drift_never_reaching_level():
    p = simulate(SdeModel.custom("1", "0", 0.0), PathGrid(1.0, 1000), 0)
    assert tanaka_local_time(p, 2.0).final == 0.0


def test_tanaka_brownian_mean(brownian_finals):
    assert abs(brownian_finals["tanaka"].mean() - MEAN_L) < 3 * SD_L / math.sqrt(N)


def test_tanaka_clip_shrinks_with_refinement():
    def med(n):
        return np.median(Ensemble(SdeModel.brownian(), PathGrid(1.0, n), 200, 4)
                         .map(lambda p: tanaka_local_time(p, 0.0).clip))
    coarse, fine = med(2 ** 10), med(2 ** 12)
    assert fine <= coarse / 2


# ---------------------------------------------------------------------- curves

def test_constant_curve_is_point_level():
    p = simulate(SdeModel.brownian(), PathGrid(1.0, 4096), 2)
    curve = np.full(4097, np.nan)
    curve[1000:3001] = 0.25
    lt = curve_local_time(p, curve, 0.02, "right")
    ref = occupation_local_time(p, LevelSpec(0.25, 0.02, "right")).values
    assert np.allclose(lt.values, ref[1000:3001] - ref[1000], atol=1e-12)
    assert lt.times[0] == p.times[1000] and lt.times[-1] == p.times[3000]


def test_sqrt_curve_increment_nonnegative():
    g = PathGrid(1.0, 4096)
    curve = np.sqrt(g.times)
    for p in Ensemble(SdeModel.brownian(), g, 50, 6):
        inc = curve_local_time(p, curve, 0.02).increment(0.1, 1.0)
        assert math.isfinite(inc) and inc >= 0


def test_base_point_independence():
    g = PathGrid(1.0, 4096)
    p = simulate(SdeModel.brownian(), g, 9)
    curve = 0.3 * np.sin(3 * g.times)
    a = curve_local_time(p, curve, 0.05, base_time=0.2)
    b = curve_local_time(p, curve, 0.05, base_time=0.5)
    assert a.increment(0.3, 0.8) == b.increment(0.3, 0.8)
    assert a.value_at(0.8) - a.value_at(0.3) == pytest.approx(b.value_at(0.8) - b.value_at(0.3), abs=1e-12)
    assert b.value_at(0.5) == 0.0
    assert np.all(b.values[: b.base_index] <= 0)
    with pytest.raises(ValueError):
        curve_local_time(p, np.where(g.times < 0.4, curve, np.nan), 0.05, base_time=0.6)


def test_curve_needs_contiguous_support():
    g = PathGrid(1.0, 16)
    p = simulate(SdeModel.brownian(), g, 0)
    c = np.zeros(17)
    c[5] = np.nan
    with pytest.raises(ValueError):
        curve_local_time(p, c, 0.1)
    with pytest.raises(ValueError):
        curve_local_time(p, np.full(17, np.nan), 0.1)


def test_one_sided_deterministic_miss():
    p = simulate(SdeModel.custom("1", "0", 0.0), PathGrid(1.0, 100), 0)
    curve = p.values + 0.5
    for s in (1, -1):
        assert one_sided_curve_local_time(p, curve, s, 0.1).final == 0.0
    with pytest.raises(ValueError):
        one_sided_curve_local_time(p, curve, 0, 0.1)


def test_one_sided_brownian_means(brownian_finals):
    for key in ("plus", "minus"):
        assert abs(brownian_finals[key].mean() - MEAN_L) < 3 * SD_L / math.sqrt(N)


# ------------------------------------------------------------------- plumbing

def test_process_csv_and_value_at():
    lt = LocalTimeProcess(np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0, 3.0]))
    buf = io.StringIO()
    lt.to_csv(buf)
    assert buf.getvalue() == "t,local_time\n0.0,0.0\n0.5,1.0\n1.0,3.0\n"
    assert lt.value_at(0.0) == 0.0
    assert lt.value_at(0.5) == 1.0
    assert lt.value_at(0.7) == 3.0


def test_default_epsilon():
    assert default_epsilon([-1.0, 1.0]) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        default_epsilon([2.0, 2.0])
