"""Acceptance criteria: one PASS/FAIL line per criterion.

Lines are printed as each test runs (visible with ``-s``) and repeated in
the pytest terminal summary.  Run as a script for the lines alone:
``python tests/test_acceptance.py``.
"""

import math
import statistics
import sys
import time

import numpy as np
import pytest

from spikeband import (Kind, OracleFactors, SolveStats, compute_ratios, compute_sizes,
                       distribute_threads, factorize, generate_banded, make_plan,
                       reduce_factorize, reduced_solve, reduced_solve_transpose,
                       relative_residual, solve, transpose_solve)
from spikeband.kernels import factorization_count
from spikeband.study import accuracy_rows, check_accuracy

# pinned tolerances
RESIDUAL_TOL = 1e-12
COMPONENT_TOL = 1e-10
REDUCED_TOL = 1e-13
RATIO_TOL = 1e-12
GRID_BUDGET_S = 300.0
ACCURACY_BUDGET_S = 120.0
ACCURACY = dict(cond_ok=1e5, res_ok=1e-10, ratio=10.0, cond_bad=1e8)
SPEED_GATE = 0.7

RESULTS = {}


def report(key, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  [{key}] {name}: {detail}"
    RESULTS[key] = line
    print(line, flush=True)
    return ok


def componentwise(X, ref):
    scale = np.abs(ref).max(axis=0)
    scale[scale == 0] = 1.0
    return float((np.abs(X - ref).max(axis=0) / scale).max())


def assemble_reduced(levels):
    """Dense reduced matrix over all tips (partition-major, top then bottom)."""
    V, W = levels.spikes[0]
    p, h, k = V.shape
    S = np.eye(p * h)
    for a in range(p):
        if a + 1 < p:
            S[a * h:(a + 1) * h, (a + 1) * h:(a + 1) * h + k] = V[a]
        if a > 0:
            S[a * h:(a + 1) * h, a * h - k:a * h] = W[a]
    return S


# ---------------------------------------------------------------- C1

def test_c1_oracle_grid():
    t0 = time.perf_counter()
    worst_res = worst_cmp = 0.0
    points = degraded = 0
    ps = set()
    for n in (64, 512, 4096):
        for k in (1, 4, 16):
            A = generate_banded(n, k, k, 1.5, n + k)
            F = np.random.default_rng(n * k).standard_normal((n, 3 * k))
            oracle = OracleFactors(A, True)
            ref = {tr: oracle.solve(F, tr) for tr in (False, True)}
            for t in range(2, 15):
                R12, R13 = compute_ratios(1.0, k, k)
                plan = make_plan(n, k, k, t, R12, R13)
                ps.add(plan.p)
                degraded += plan.p != distribute_threads(t).p
                for piv in (False, True):
                    fact = factorize(A, plan, pivoting=piv)
                    for m in sorted({1, k, 3 * k}):
                        for tr in (False, True):
                            X = (transpose_solve if tr else solve)(fact, F[:, :m])
                            worst_res = max(worst_res,
                                            relative_residual(A, X, F[:, :m], tr))
                            worst_cmp = max(worst_cmp, componentwise(X, ref[tr][:, :m]))
                            points += 1
    elapsed = time.perf_counter() - t0
    ok = (worst_res <= RESIDUAL_TOL and worst_cmp <= COMPONENT_TOL
          and elapsed < GRID_BUDGET_S)
    assert report("C1", "oracle equivalence grid", ok,
                  f"{points} solves, p in {sorted(ps)}, {degraded} plan points degraded "
                  f"by the minimum-size rule, worst residual {worst_res:.2e} "
                  f"(<= {RESIDUAL_TOL:g}), worst component-wise {worst_cmp:.2e} "
                  f"(<= {COMPONENT_TOL:g}), {elapsed:.1f}s (< {GRID_BUDGET_S:g}s)")


# ---------------------------------------------------------------- C2

def test_c2_sweep_parity():
    n, k = 4096, 4
    A = generate_banded(n, k, k, 1.5, 1)
    F = np.random.default_rng(1).standard_normal((n, 4))
    bad = []
    kinds_seen = set()
    for t in range(2, 15):
        plan = make_plan(n, k, k, t, 1.0, 2.0)
        for piv in (False, True):
            fact = factorize(A, plan, pivoting=piv)
            stats = SolveStats()
            solve(fact, F, stats)
            for i, kd in enumerate(plan.kinds):
                kinds_seen.add(kd)
                want = (0, 2) if kd is Kind.FIRST_LAST else (3, 4)
                got = (fact.factor_sweeps[i], stats.partition_sweeps[i])
                if got != want:
                    bad.append((t, piv, i, kd.value, got))
    ok = not bad and kinds_seen == set(Kind)
    assert report("C2", "sweep-count parity", ok,
                  "first/last (0 factor, 2 solve), inner single and dual (3, 4) for "
                  f"t = 2..14, both pivoting modes; mismatches: {bad or 'none'}")


# ---------------------------------------------------------------- C3

def test_c3_reduced_brute_force():
    worst = 0.0
    counts_ok = True
    for p in (2, 4, 8):
        for k in (1, 2, 3):
            n = 40 * p * k
            A = generate_banded(n, k, k, 1.5, p * 10 + k)
            fact = factorize(A, make_plan(n, k, k, p, 1.0, 2.0))
            assert fact.p == p
            lv = fact.levels
            S = assemble_reduced(lv)
            Y = np.random.default_rng(p + k).standard_normal((p, 2 * k, 3))
            for fn, M in ((reduced_solve, S), (reduced_solve_transpose, S.T)):
                stats = SolveStats()
                X = fn(lv, Y, stats).reshape(-1, 3)
                ref = np.linalg.solve(M, Y.reshape(-1, 3))
                worst = max(worst, float(np.abs(X - ref).max() / np.abs(ref).max()))
                counts_ok &= stats.reduced_solves == p - 1
            # random tips too, stronger coupling than diagonally dominant inputs give
            rng = np.random.default_rng(p * k)
            tips = [0.4 * rng.standard_normal((p, k, k)) for _ in range(4)]
            tips[0][0] = 0
            tips[3][-1] = 0
            lv = reduce_factorize(tips, p, k)
            S = assemble_reduced(lv)
            for fn, M in ((reduced_solve, S), (reduced_solve_transpose, S.T)):
                X = fn(lv, Y).reshape(-1, 3)
                ref = np.linalg.solve(M, Y.reshape(-1, 3))
                worst = max(worst, float(np.abs(X - ref).max() / np.abs(ref).max()))
    ok = worst <= REDUCED_TOL and counts_ok
    assert report("C3", "reduced-system brute force", ok,
                  f"p in (2,4,8), k in (1,2,3), forward and transpose, worst relative error "
                  f"{worst:.2e} (<= {REDUCED_TOL:g}); 2k-solve count == p-1: {counts_ok}")


# ---------------------------------------------------------------- C4

def test_c4_ratio_formulas():
    errs = []
    for K in (0.25, 0.75, 1.0, 4 / 3, 3.0):
        for k in (1, 16, 160):
            r12, r13 = compute_ratios(K, math.inf, k)
            errs += [abs(r12 - 1), abs(r13 - 2)]
            r12, r13 = compute_ratios(K, 1e16 * k, k)
            errs += [abs(r12 - 1), abs(r13 - 2)]
            r12, r13 = compute_ratios(K, 0, k)
            errs += [abs(r12 - (0.5 + 0.75 * K))]
    limit_err = max(errs)
    size_bad = []
    for t in range(2, 65):
        plan = distribute_threads(t)
        for n in (10_000, 123_457, 10**6 + 3):
            for r12 in (0.6, 1.0, 1.15, 1.5, 2.2):
                sizes = np.diff(compute_sizes(n, plan, r12, 2 * r12))
                n2 = [s for s, kd in zip(sizes, plan.kinds) if kd is Kind.INNER_DUAL]
                n3 = [s for s, kd in zip(sizes, plan.kinds) if kd is Kind.INNER_SINGLE]
                if sizes.sum() != n or any(abs(a - 2 * b) > 1 for a in n2 for b in n3):
                    size_bad.append((t, n, r12))
    ok = limit_err <= RATIO_TOL and not size_bad
    assert report("C4", "ratio formulas and sizing", ok,
                  f"limit error {limit_err:.1e} (<= {RATIO_TOL:g}); sizes sum to n and "
                  f"n2 = 2 n3 +-1 for t in [2,64]; violations: {size_bad or 'none'}")


# ---------------------------------------------------------------- C5

FIGURES = {4: ("1111", 0), 5: ("1211", 0), 6: ("1221", 0), 7: ("1221", 1),
           8: ("11111111", 0), 9: ("12111111", 0), 10: ("12211111", 0),
           11: ("12221111", 0), 12: ("12222111", 0), 13: ("12222211", 0),
           14: ("12222221", 0), 15: ("12222221", 1)}


def test_c5_thread_table():
    bad = {}
    for t, want in FIGURES.items():
        plan = distribute_threads(t)
        got = ("".join("2" if kd is Kind.INNER_DUAL else "1" for kd in plan.kinds),
               plan.idle_threads)
        if got != want:
            bad[t] = got
    ok = not bad
    assert report("C5", "thread-distribution figures", ok,
                  "t = 4..15 layouts incl. one idle thread at t = 7 and t = 15; "
                  f"mismatches: {bad or 'none'}")


# ---------------------------------------------------------------- C6

def test_c6_transpose_reuse():
    worst = 0.0
    extra = 0
    for t in (2, 4, 6, 12):
        for piv in (False, True):
            n, k = 4096, 8
            A = generate_banded(n, k, k, 1.5, t)
            F = np.random.default_rng(t).standard_normal((n, k))
            fact = factorize(A, make_plan(n, k, k, t, 1.0, 2.0), pivoting=piv)
            solve(fact, F)
            sweeps = fact.factor_sweeps
            before = factorization_count()
            X = transpose_solve(fact, F)
            extra += factorization_count() - before
            extra += fact.factor_sweeps != sweeps
            worst = max(worst, relative_residual(A, X, F, transpose=True))
            ref = OracleFactors(A, True).solve(F, transpose=True)
            worst = max(worst, float(np.linalg.norm(X - ref) / np.linalg.norm(ref)))
    ok = worst <= RESIDUAL_TOL and extra == 0
    assert report("C6", "transpose reuse", ok,
                  f"worst transpose residual / oracle distance {worst:.2e} "
                  f"(<= {RESIDUAL_TOL:g}); extra factorization work: {extra}")


# ---------------------------------------------------------------- C7

def test_c7_accuracy_study():
    t0 = time.perf_counter()
    rows = accuracy_rows(2000, 8, 0, threads=2)
    elapsed = time.perf_counter() - t0
    conds = [r.cond for r in rows]
    a, b, c = check_accuracy(rows, **ACCURACY)
    span = min(conds) <= 1e3 and max(conds) >= 1e10
    ratios = [r.residual for r in rows if r.solver == "spike-pivot"]
    orc = [r.residual for r in rows if r.solver == "oracle-pivot"]
    nop = [r.residual for r in rows if r.solver == "spike-nopivot"]
    worst_piv = max(p / o for p, o in zip(ratios, orc))
    best_gap = max(n / p for n, p, r in zip(nop, ratios, rows[::3]) if r.cond > 1e8)
    ok = a and b and c and span and elapsed < ACCURACY_BUDGET_S
    assert report("C7", "accuracy study", ok,
                  f"cond {min(conds):.1e}..{max(conds):.1e}; (a) {a}; (b) {b}, worst "
                  f"pivot/oracle {worst_piv:.2f} (<= 10); (c) {c}, largest "
                  f"nopivot/pivot above 1e8 {best_gap:.1f} (>= 10); {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------- C8

def _combined(A, F, t, repeats=3):
    plan = make_plan(A.n, A.kl, A.ku, t, *compute_ratios(1.0, F.shape[1], A.k))
    times = []
    for _ in range(repeats):
        s = time.perf_counter()
        solve(factorize(A, plan), F)
        times.append(time.perf_counter() - s)
    return statistics.median(times)


def test_c8_speed_sanity():
    import os
    n, k, m = 200_000, 64, 64
    A = generate_banded(n, k, k, 1.5, 0)
    F = np.random.default_rng(0).standard_normal((n, m))
    _combined(A, F, 4, repeats=1)  # warm-up
    t1, t2, t4 = (_combined(A, F, t) for t in (1, 2, 4))
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    ok = t4 < SPEED_GATE * t1
    assert report("C8", "scaled speed sanity", ok,
                  f"t=1 {t1:.2f}s, t=4 {t4:.2f}s, ratio {t4 / t1:.2f} (gate < {SPEED_GATE}); "
                  f"t=2 ratio {t2 / t1:.2f} (reported only); {cores} core(s) available")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
