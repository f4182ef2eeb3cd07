"""Thread distribution, load-balancing ratios and partition sizing."""

from __future__ import annotations

import enum
import os
import statistics
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .band import generate_banded
from .kernels import lu_factor, solve_factored

__all__ = [
    "Kind",
    "PartitionPlan",
    "distribute_threads",
    "compute_ratios",
    "compute_sizes",
    "make_plan",
    "min_partition_size",
    "calibrate_k",
    "read_k_cache",
    "write_k_cache",
    "k_cache_path",
    "DEFAULT_K",
]

DEFAULT_K = 1.0


class Kind(enum.Enum):
    FIRST_LAST = "FirstLast"
    INNER_SINGLE = "InnerSingle"
    INNER_DUAL = "InnerDual"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PartitionPlan:
    """How rows and threads are split among SPIKE partitions.

    Attributes
    ----------
    p : int
        Number of partitions (a power of two).
    kinds : tuple of Kind
        Per-partition tag.  With ``p = 1`` the single entry is ``FIRST_LAST``.
    threads_used, idle_threads : int
        Threads actually given work, and threads left over.
    bounds : tuple of int or None
        ``p + 1`` row offsets; ``None`` for a skeleton plan.
    ratios : (float, float) or None
        ``(R12, R13)`` used for sizing.
    """

    p: int
    kinds: tuple
    threads_used: int
    idle_threads: int
    bounds: tuple | None = None
    ratios: tuple | None = None

    @property
    def t(self) -> int:
        return self.threads_used + self.idle_threads

    @property
    def q(self) -> int:
        return sum(kd is not Kind.INNER_DUAL for kd in self.kinds)

    @property
    def r(self) -> int:
        return sum(kd is Kind.INNER_DUAL for kd in self.kinds)

    @property
    def sizes(self) -> list[int]:
        if self.bounds is None:
            raise ValueError("plan has no bounds yet")
        return [b - a for a, b in zip(self.bounds, self.bounds[1:])]

    def describe(self) -> str:
        tags = "".join("2" if kd is Kind.INNER_DUAL else "1" for kd in self.kinds)
        return f"p={self.p} threads={self.threads_used}+{self.idle_threads} [{tags}]"


def distribute_threads(t: int) -> PartitionPlan:
    """Plan skeleton: partition count, kinds and idle threads for ``t`` threads.

    The partition count is the largest power of two not above ``t``.  Extra
    threads pair up with inner partitions in order from the second one; the
    first and last partitions always keep a single thread.
    """
    t = int(t)
    if t < 1:
        raise ValueError(f"thread count must be at least 1, got {t}")
    p = 1 << (t.bit_length() - 1)
    if p == 1:
        return PartitionPlan(1, (Kind.FIRST_LAST,), 1, 0)
    r = min(t - p, p - 2)
    kinds = [Kind.FIRST_LAST] + [Kind.INNER_DUAL] * r \
        + [Kind.INNER_SINGLE] * (p - 2 - r) + [Kind.FIRST_LAST]
    return PartitionPlan(p, tuple(kinds), p + r, t - p - r)


def compute_ratios(K: float, n_rhs: float | None, k: int,
                   regime: str | None = None) -> tuple[float, float]:
    """Partition size ratios ``(R12, R13)`` from the cost model.

    Parameters
    ----------
    K : float
        Solve-to-factorization cost constant.
    n_rhs : float or None
        Number of right-hand sides.  ``None`` means unknown; ``regime`` then
        selects the limit: ``"factor"`` (``n_rhs / k -> 0``) or ``"solve"``
        (``n_rhs / k -> inf``).  ``math.inf`` is accepted directly.
    k : int
        Half-bandwidth.
    """
    if not K > 0:
        raise ValueError(f"K must be positive, got {K}")
    if n_rhs is None:
        if regime == "factor":
            n_rhs = 0.0
        elif regime == "solve":
            n_rhs = np.inf
        else:
            raise ValueError("n_rhs unknown: pass regime='factor' or regime='solve'")
    if n_rhs < 0:
        raise ValueError("n_rhs must be non-negative")
    if np.isinf(n_rhs):
        return 1.0, 2.0
    if k < 1:
        raise ValueError("k must be at least 1")
    rho = n_rhs / k
    r13 = 1.0 / (1.0 + K * rho) + (1.5 + 2.0 * rho) / (1.0 / K + rho)
    return r13 / 2.0, r13


def min_partition_size(kind: Kind, kl: int, ku: int) -> int:
    """Smallest row count a partition of ``kind`` may have."""
    if kind is Kind.INNER_DUAL:
        return 2 * (kl + ku + 1)
    return 2 * max(kl, ku) + 1


def compute_sizes(n: int, plan: PartitionPlan, R12: float, R13: float) -> tuple[int, ...]:
    """Partition boundaries for ``plan`` (remainders go to the first partition).

    First/last partitions get ``n1``, dual-thread inner partitions ``n2 = n1/R12``
    and single-thread inner partitions ``n3 = n1/R13``.
    """
    if R12 <= 0 or R13 <= 0:
        raise ValueError("ratios must be positive")
    if plan.p == 1:
        return (0, n)
    x = plan.r
    y = plan.p - 2 - x
    den = 2 * R12 * R13 + x * R13 + y * R12
    n1, n2, n3 = n * R12 * R13 / den, n * R13 / den, n * R12 / den
    size = {Kind.INNER_DUAL: int(round(n2)), Kind.INNER_SINGLE: int(round(n3))}
    sizes = [int(round(n1))]
    for kd in plan.kinds[1:-1]:
        sizes.append(size[kd])
    sizes.append(int(round(n1)))
    sizes[0] = n - sum(sizes[1:])
    return tuple(int(b) for b in np.concatenate([[0], np.cumsum(sizes)]))


def _fits(n, kl, ku, plan, bounds):
    sizes = np.diff(bounds)
    return all(s >= min_partition_size(kd, kl, ku) for s, kd in zip(sizes, plan.kinds))


def make_plan(n: int, kl: int, ku: int, t: int, R12: float, R13: float) -> PartitionPlan:
    """Full plan for an ``n``-row system, degrading ``p`` when partitions get too small.

    When any partition falls under its minimum size, the partition count is
    halved (``p' = p/2``, threads clipped to ``2p' - 2``) and sizing retried.
    """
    skel = distribute_threads(t)
    while True:
        bounds = compute_sizes(n, skel, R12, R13)
        if skel.p == 1 or _fits(n, kl, ku, skel, bounds):
            return replace(skel, bounds=bounds, ratios=(float(R12), float(R13)))
        p2 = skel.p // 2
        skel = distribute_threads(1 if p2 == 1 else min(skel.threads_used, 2 * p2 - 2))


# ---------------------------------------------------------------- K calibration

def k_cache_path() -> Path:
    env = os.environ.get("SPIKE_K_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "spikeband" / "k.cfg"


def read_k_cache(path=None) -> float | None:
    path = Path(path) if path is not None else k_cache_path()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        return None
    for line in text.splitlines():
        key, sep, val = line.partition("=")
        if sep and key.strip() == "K":
            try:
                K = float(val)
            except ValueError:
                return None
            return K if K > 0 else None
    return None


def write_k_cache(K: float, path=None) -> Path:
    path = Path(path) if path is not None else k_cache_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"K={K!r}\n", encoding="utf-8")
    return path


class CalibrationWarning(UserWarning):
    """Timings too short to trust."""


MIN_ELAPSED = 0.010


def k_from_timings(solve_times, factor_times) -> float:
    """Median of per-run ``solve / factor`` ratios."""
    ratios = [s / f for s, f in zip(solve_times, factor_times)]
    return float(statistics.median(ratios))


def calibrate_k(n_sample: int | None = None, k_sample: int = 32, repeats: int = 5,
                seed: int = 0) -> float:
    """Measure ``K`` as solve time over factorization time with ``n_rhs = k``.

    Uses the serial non-pivoting band LU and a two-sweep solve.  Warns with
    :class:`CalibrationWarning` when a timed phase is under 10 ms.
    """
    n_sample = 200 * k_sample if n_sample is None else int(n_sample)
    if n_sample < 2 * k_sample + 1:
        raise ValueError(f"n_sample={n_sample} too small for k={k_sample}")
    A = generate_banded(n_sample, k_sample, k_sample, 1.5, seed)
    F = np.random.default_rng(seed).standard_normal((n_sample, k_sample))
    fac = lu_factor(A)  # warm-up (JIT)
    solve_factored(fac, F[:, :1])
    ft, st = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fac = lu_factor(A)
        t1 = time.perf_counter()
        solve_factored(fac, F)
        t2 = time.perf_counter()
        ft.append(t1 - t0)
        st.append(t2 - t1)
    if min(min(ft), min(st)) < MIN_ELAPSED:
        warnings.warn(
            f"calibration phases took under {MIN_ELAPSED * 1e3:.0f} ms; "
            "use a larger sample for a reliable K", CalibrationWarning, stacklevel=2)
    return k_from_timings(st, ft)
