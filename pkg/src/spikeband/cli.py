"""Command-line harness: ``spikeband {gen,calibrate,bench,sweep-ratios,accuracy}``.

CSV output has a header row and one record per line.  The exit status is 0
when every residual check of the invoked command passes, 1 when one fails
and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
import warnings

import numpy as np

from .band import (degree_of_diagonal_dominance, generate_banded, read_matrix,
                   relative_residual, write_matrix)
from .factor import factorize
from .kernels import DEFAULT_BOOST
from .partition import (DEFAULT_K, CalibrationWarning, calibrate_k, compute_ratios,
                        k_cache_path, make_plan, read_k_cache, write_k_cache)
from .solve import SolveStats, solve, transpose_solve
from .study import accuracy_rows, check_accuracy

BENCH_FIELDS = ["stage", "threads", "p", "plan", "seconds", "residual",
                "sweeps_factor", "sweeps_solve"]
SWEEP_FIELDS = ["r12", "r13", "p", "factor_seconds", "solve_seconds", "total_seconds",
                "residual", "calculated"]
ACCURACY_FIELDS = ["family", "delta", "dd", "cond", "solver", "threads", "residual"]


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list: {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated number list: {text!r}")
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


class UsageError(Exception):
    """Bad argument combination; reported with exit status 2."""


def _add_band(p, require_n=True):
    p.add_argument("--n", type=int, required=require_n, default=None, help="matrix order")
    p.add_argument("--k", type=int, default=None, help="half-bandwidth (sets --kl and --ku)")
    p.add_argument("--kl", type=int, default=None, help="sub-diagonals")
    p.add_argument("--ku", type=int, default=None, help="super-diagonals")
    p.add_argument("--dd", type=float, default=1.5, help="degree of diagonal dominance")
    p.add_argument("--seed", type=int, default=0)


def _add_solver(p):
    p.add_argument("--nrhs", type=int, default=1, help="right-hand sides")
    p.add_argument("--pivot", action="store_true", help="partial pivoting in partitions")
    p.add_argument("--boost-eps", type=float, default=None,
                   help=f"relative boost for zero pivots (default {DEFAULT_BOOST:.2e})")
    p.add_argument("--ratio-k", type=float, default=None,
                   help="tuning constant K (overrides the calibration cache)")
    p.add_argument("--matrix", default=None, help="read the matrix from a file instead")
    p.add_argument("--format", choices=["mm", "spkb"], default=None)
    p.add_argument("--csv", default=None, help="write CSV here (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeband", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random band matrix")
    _add_band(g)
    g.add_argument("--out", required=True, help="output path")
    g.add_argument("--format", choices=["mm", "spkb"], default=None,
                   help="file format (default: from the extension)")

    c = sub.add_parser("calibrate", help="measure the tuning constant K")
    c.add_argument("--n", type=int, default=None, help="sample order (default 200*k)")
    c.add_argument("--k", type=int, default=32, help="sample half-bandwidth (= n_rhs)")
    c.add_argument("--repeats", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--write-cache", action="store_true", help="store K in the cache file")

    b = sub.add_parser("bench", help="time factor/solve stages per thread count")
    _add_band(b, require_n=False)
    _add_solver(b)
    b.add_argument("--threads", type=_int_list, default=[1, 2, 4])
    b.add_argument("--transpose", action="store_true", help="also time transpose solves")
    b.add_argument("--r12", type=float, default=None)
    b.add_argument("--r13", type=float, default=None)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--tol", type=float, default=1e-12, help="residual threshold")

    s = sub.add_parser("sweep-ratios", help="time a grid of partition size ratios")
    _add_band(s, require_n=False)
    _add_solver(s)
    s.add_argument("--threads", type=_int_list, default=[4],
                   help="thread count (the first value is used)")
    s.add_argument("--r12", type=_float_list, default=[0.5, 0.75, 1.0, 1.25, 1.5, 2.0])
    s.add_argument("--r13", type=_float_list, default=[1.0, 1.5, 2.0, 2.5, 3.0, 4.0])
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--tol", type=float, default=1e-12)

    a = sub.add_parser("accuracy", help="residual versus condition number study")
    a.add_argument("--n", type=int, default=2000)
    a.add_argument("--k", type=int, default=8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--threads", type=_int_list, default=[2],
                   help="SPIKE thread count (the first value is used)")
    a.add_argument("--csv", default=None)
    return parser


def _bands(args):
    k = args.k
    kl = args.kl if args.kl is not None else k
    ku = args.ku if args.ku is not None else k
    if kl is None or ku is None:
        raise UsageError("give --k or both --kl and --ku")
    return kl, ku


def _tuning_k(args) -> float:
    if getattr(args, "ratio_k", None) is not None:
        if args.ratio_k <= 0:
            raise UsageError("--ratio-k must be positive")
        return args.ratio_k
    cached = read_k_cache()
    return DEFAULT_K if cached is None else cached


def _matrix(args):
    if getattr(args, "matrix", None):
        return read_matrix(args.matrix, args.format)
    if args.n is None:
        raise UsageError("--n is required without --matrix")
    kl, ku = _bands(args)
    return generate_banded(args.n, kl, ku, args.dd, args.seed)


class _Out:
    def __init__(self, path, fields):
        self.fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
        self.w = csv.DictWriter(self.fh, fieldnames=fields, lineterminator="\n")
        self.w.writeheader()

    def row(self, **kw):
        self.w.writerow(kw)
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def _median_time(fn, repeats):
    times, out = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def cmd_gen(args) -> int:
    kl, ku = _bands(args)
    A = generate_banded(args.n, kl, ku, args.dd, args.seed)
    write_matrix(A, args.out, args.format)
    print(f"n={A.n} kl={A.kl} ku={A.ku} dd={degree_of_diagonal_dominance(A):.17g} "
          f"out={args.out}")
    return 0


def cmd_calibrate(args) -> int:
    k = args.k
    n = 200 * k if args.n is None else args.n
    if n < 2 * k + 1:
        k = max(1, (n - 1) // 2)
        print(f"warning: sample n={n} too small for k={args.k}; using k={k}", file=sys.stderr)
        if n < 3:
            raise UsageError("sample too small to calibrate")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CalibrationWarning)
        K = calibrate_k(n, k, args.repeats, args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"K={K:.6g}")
    if args.write_cache:
        path = write_k_cache(K)
        print(f"cached in {path}", file=sys.stderr)
    return 0


def _ratios(args, k):
    if args.r12 is not None and args.r13 is not None:
        return args.r12, args.r13
    r12, r13 = compute_ratios(_tuning_k(args), args.nrhs, max(k, 1))
    return (args.r12 if args.r12 is not None else r12,
            args.r13 if args.r13 is not None else r13)


def _warm_up(A, F, pivot, t):
    # compile kernels and start the worker pools outside the timed region
    solve(factorize(A, make_plan(A.n, A.kl, A.ku, t, 1.0, 2.0), pivoting=pivot), F)


def cmd_bench(args) -> int:
    A = _matrix(args)
    rng = np.random.default_rng(args.seed)
    F = rng.standard_normal((A.n, args.nrhs))
    R12, R13 = _ratios(args, A.k)
    _warm_up(A, F, args.pivot, max(args.threads))
    out = _Out(args.csv, BENCH_FIELDS)
    ok = True
    for t in args.threads:
        plan = make_plan(A.n, A.kl, A.ku, t, R12, R13)

        def fac():
            return factorize(A, plan, pivoting=args.pivot, boost_eps=args.boost_eps)

        tf, fact = _median_time(fac, args.repeats)
        stats = SolveStats()
        ts, X = _median_time(lambda: solve(fact, F, stats), args.repeats)
        res = relative_residual(A, X, F)
        ok &= res <= args.tol
        common = dict(threads=t, p=plan.p, plan=plan.describe(),
                      sweeps_factor="/".join(map(str, fact.factor_sweeps)))
        sweeps = "/".join(map(str, stats.partition_sweeps))
        out.row(stage="factor", seconds=_fmt(tf), residual=_fmt(res), sweeps_solve="", **common)
        out.row(stage="solve", seconds=_fmt(ts), residual=_fmt(res), sweeps_solve=sweeps, **common)
        out.row(stage="combined", seconds=_fmt(tf + ts), residual=_fmt(res),
                sweeps_solve=sweeps, **common)
        if args.transpose:
            tstats = SolveStats()
            tt, XT = _median_time(lambda: transpose_solve(fact, F, tstats), args.repeats)
            rt = relative_residual(A, XT, F, transpose=True)
            ok &= rt <= args.tol
            out.row(stage="transpose", seconds=_fmt(tt), residual=_fmt(rt),
                    sweeps_solve="/".join(map(str, tstats.partition_sweeps)), **common)
    out.close()
    return 0 if ok else 1


def cmd_sweep_ratios(args) -> int:
    A = _matrix(args)
    F = np.random.default_rng(args.seed).standard_normal((A.n, args.nrhs))
    t = args.threads[0]
    calc = compute_ratios(_tuning_k(args), args.nrhs, max(A.k, 1))
    grid = [(r12, r13, False) for r12 in args.r12 for r13 in args.r13]
    grid.append((calc[0], calc[1], True))
    _warm_up(A, F, args.pivot, t)
    out = _Out(args.csv, SWEEP_FIELDS)
    ok = True
    totals = []
    for r12, r13, is_calc in grid:
        plan = make_plan(A.n, A.kl, A.ku, t, r12, r13)
        tf, fact = _median_time(lambda: factorize(A, plan, pivoting=args.pivot,
                                                  boost_eps=args.boost_eps), args.repeats)
        ts, X = _median_time(lambda: solve(fact, F), args.repeats)
        res = relative_residual(A, X, F)
        ok &= res <= args.tol
        totals.append((tf + ts, is_calc))
        out.row(r12=_fmt(r12), r13=_fmt(r13), p=plan.p, factor_seconds=_fmt(tf),
                solve_seconds=_fmt(ts), total_seconds=_fmt(tf + ts), residual=_fmt(res),
                calculated=int(is_calc))
    out.close()
    best = min(tt for tt, _ in totals)
    calc_t = next(tt for tt, c in totals if c)
    gain = 100.0 * (calc_t - best) / calc_t if calc_t > 0 else 0.0
    print(f"best measured total {best:.6g}s, calculated ratios {calc_t:.6g}s, "
          f"gain from best measured ratios {gain:.1f}%", file=sys.stderr)
    return 0 if ok else 1


def cmd_accuracy(args) -> int:
    rows = accuracy_rows(args.n, args.k, args.seed, args.threads[0])
    out = _Out(args.csv, ACCURACY_FIELDS)
    for r in rows:
        out.row(family=r.family, delta=f"{r.delta:g}", dd=f"{r.dd:.17g}", cond=f"{r.cond:.3e}",
                solver=r.solver, threads=r.threads, residual=f"{r.residual:.3e}")
    out.close()
    checks = check_accuracy(rows)
    names = ("all solvers <= 1e-10 for cond <= 1e5", "pivoting SPIKE within 10x of oracle",
             "non-pivoting SPIKE >= 10x worse somewhere above cond 1e8")
    for name, good in zip(names, checks):
        print(f"{'PASS' if good else 'FAIL'}: {name}", file=sys.stderr)
    return 0 if all(checks) else 1


COMMANDS = {"gen": cmd_gen, "calibrate": cmd_calibrate, "bench": cmd_bench,
            "sweep-ratios": cmd_sweep_ratios, "accuracy": cmd_accuracy}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"spikeband {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
