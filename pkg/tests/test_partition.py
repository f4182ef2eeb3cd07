import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeband import Kind, compute_ratios, compute_sizes, distribute_threads, make_plan
from spikeband.partition import (CalibrationWarning, calibrate_k, k_cache_path,
                                 k_from_timings, min_partition_size, read_k_cache,
                                 write_k_cache)

F, S, D = Kind.FIRST_LAST, Kind.INNER_SINGLE, Kind.INNER_DUAL


def tags(plan):
    return "".join("2" if kd is D else "1" for kd in plan.kinds)


# thread layouts of the four- and eight-partition distribution figures:
# threads go to inner partitions in order from the second one
FIGURE_4_7 = {4: ("1111", 0), 5: ("1211", 0), 6: ("1221", 0), 7: ("1221", 1)}
FIGURE_8_15 = {8: ("11111111", 0), 9: ("12111111", 0), 10: ("12211111", 0),
               11: ("12221111", 0), 12: ("12222111", 0), 13: ("12222211", 0),
               14: ("12222221", 0), 15: ("12222221", 1)}


@pytest.mark.parametrize("t,expected", sorted({**FIGURE_4_7, **FIGURE_8_15}.items()))
def test_distribution_figures(t, expected):
    plan = distribute_threads(t)
    assert (tags(plan), plan.idle_threads) == expected
    assert plan.p == len(expected[0])


def test_distribution_examples():
    assert distribute_threads(4).kinds == (F, S, S, F)
    assert distribute_threads(6).kinds == (F, D, D, F)
    p6, p7 = distribute_threads(6), distribute_threads(7)
    assert (p7.p, p7.kinds, p7.threads_used, p7.idle_threads) == (4, p6.kinds, 6, 1)
    assert distribute_threads(2).kinds == (F, F)
    assert distribute_threads(1).p == 1
    with pytest.raises(ValueError):
        distribute_threads(0)


@pytest.mark.parametrize("t", range(2, 65))
def test_plan_invariants(t):
    plan = distribute_threads(t)
    m = plan.p.bit_length() - 1
    assert plan.p == 2 ** m and plan.p >= 2
    assert plan.kinds[0] is F and plan.kinds[-1] is F
    assert plan.q + plan.r == plan.p
    assert plan.threads_used == plan.q + 2 * plan.r
    assert 2 ** m <= plan.threads_used <= 2 ** (m + 1) - 2
    assert (plan.idle_threads > 0) == (t == 2 ** (m + 1) - 1)
    full = make_plan(100_000, 4, 4, t, 1.2, 2.4)
    b = np.array(full.bounds)
    assert b[0] == 0 and b[-1] == 100_000 and np.all(np.diff(b) > 0)
    assert min(full.sizes) >= 2 * 4 + 1


def test_ratio_limits():
    for K in (0.3, 1.0, 4 / 3, 5.0):
        r12, r13 = compute_ratios(K, math.inf, 8)
        assert (r12, r13) == (1.0, 2.0)
        r12, r13 = compute_ratios(K, 1e15, 1)
        assert abs(r12 - 1) <= 1e-12 and abs(r13 - 2) <= 1e-12
        r12, r13 = compute_ratios(K, 0, 8)
        assert abs(r12 - (0.5 + 0.75 * K)) <= 1e-12
        assert abs(r13 - (1 + 1.5 * K)) <= 1e-12


def test_ratio_examples():
    assert compute_ratios(4 / 3, 0, 160) == pytest.approx((1.5, 3.0), abs=1e-12)
    assert compute_ratios(1.0, 8, 8) == pytest.approx((1.125, 2.25), abs=1e-12)


def test_ratio_table_with_back_derived_k():
    # reference ratio values (k = 160): R13 = 2.7, 2.4, 2.3 for 80, 160, 320 vectors.
    # K = 4/3 reproduces the 160 and 320 columns; the 80 column comes out 2.6.
    got = {m: compute_ratios(4 / 3, m, 160)[1] for m in (80, 160, 320)}
    assert round(got[160], 1) == 2.4 and round(got[320], 1) == 2.3
    assert got[80] == pytest.approx(2.6, abs=1e-12)


def test_unknown_rhs_needs_regime():
    assert compute_ratios(2.0, None, 4, "solve") == (1.0, 2.0)
    assert compute_ratios(2.0, None, 4, "factor") == pytest.approx((2.0, 4.0))
    with pytest.raises(ValueError):
        compute_ratios(2.0, None, 4)
    with pytest.raises(ValueError):
        compute_ratios(0.0, 1, 4)


@given(K=st.floats(0.67, 10), a=st.floats(0, 50), b=st.floats(0, 50))
def test_r13_monotone_decreasing(K, a, b):
    lo, hi = sorted((a, b))
    r_lo, r_hi = compute_ratios(K, lo, 1)[1], compute_ratios(K, hi, 1)[1]
    assert r_hi <= r_lo + 1e-12
    assert 2.0 - 1e-12 <= r_hi <= 1 + 1.5 * K + 1e-12


def test_size_examples():
    plan = distribute_threads(4)
    assert compute_sizes(1200, plan, 1.0, 2.0) == (0, 400, 600, 800, 1200)
    assert compute_sizes(1001, distribute_threads(2), 1.3, 2.6) == (0, 501, 1001)
    b = compute_sizes(1000, distribute_threads(6), 1.15, 2.3)
    sizes = np.diff(b)
    assert sizes.sum() == 1000
    assert sizes[0] == 267 and sizes[1] == 233 and sizes[2] == 233


@given(n=st.integers(10_000, 10**7), t=st.integers(2, 64),
       r12=st.floats(0.5, 3), K=st.floats(0.2, 5))
def test_sizes_sum_and_ratio(n, t, r12, K):
    plan = distribute_threads(t)
    b = compute_sizes(n, plan, r12, 2 * r12)
    sizes = np.diff(b)
    assert sizes.sum() == n and b[0] == 0
    duals = [s for s, kd in zip(sizes, plan.kinds) if kd is D]
    singles = [s for s, kd in zip(sizes, plan.kinds) if kd is S]
    for n2 in duals:
        for n3 in singles:
            assert abs(n2 - 2 * n3) <= 1


def test_min_sizes_and_degradation():
    assert min_partition_size(S, 3, 5) == 11
    assert min_partition_size(D, 3, 5) == 18
    plan = make_plan(64, 16, 16, 8, 1.0, 2.0)
    assert plan.p == 1 and plan.bounds == (0, 64)
    plan = make_plan(200, 16, 16, 14, 1.0, 2.0)
    assert plan.p in (2, 4)
    assert all(s >= min_partition_size(kd, 16, 16) for s, kd in zip(plan.sizes, plan.kinds))
    assert plan.threads_used <= 2 * plan.p - 2 or plan.p == 2


def test_k_from_timings():
    assert k_from_timings([1.0], [0.75]) == pytest.approx(4 / 3)
    assert k_from_timings([1.0, 2.0, 9.0], [1.0, 1.0, 1.0]) == 2.0


def test_k_cache_round_trip(k_cache):
    assert k_cache_path() == k_cache
    assert read_k_cache() is None
    write_k_cache(1.25)
    assert read_k_cache() == 1.25
    assert k_cache.read_text() == "K=1.25\n"
    k_cache.write_text("K=-3\n")
    assert read_k_cache() is None


def test_calibrate_small_sample_warns():
    with pytest.raises(ValueError):
        calibrate_k(10, 32)
    with pytest.warns(CalibrationWarning):
        K = calibrate_k(200, 4, repeats=3)
    assert K > 0


def test_calibration_is_roughly_scale_free():
    # samples large enough that run-to-run timing noise stays well under 20%
    with warnings.catch_warnings():
        warnings.simplefilter("error", CalibrationWarning)
        k1 = calibrate_k(80_000, 16, repeats=5)
        k2 = calibrate_k(160_000, 16, repeats=5)
    assert abs(k2 - k1) / k1 < 0.2
