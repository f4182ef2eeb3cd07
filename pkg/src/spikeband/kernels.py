"""Per-partition band factorizations and triangular sweeps.

Factors are held in *row storage*: ``ab[i, c]`` is entry ``(i, i - kl + c)``.
Columns ``c < kl`` carry the unit-lower multipliers (LAPACK ``gbtrf``
convention: multipliers are not permuted by later row interchanges), column
``kl`` the diagonal of ``U`` and columns ``kl + 1 .. kl + wu`` its upper band,
where ``wu = ku`` without pivoting and ``ku + kl`` with it.

Every sweep kernel works on a contiguous row range ``[r0, r1)`` of the
partition and on a right-hand-side block that holds exactly those rows, which
is what lets SPIKE skip the zero stretches of its spike right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import threading

import numpy as np
from numba import njit

from .band import BandedMatrix, SingularMatrixError

__all__ = [
    "LUFactors",
    "ULFactors",
    "SweepCounter",
    "lu_factor",
    "ul_factor",
    "sweep_lower",
    "sweep_upper",
    "solve_factored",
    "EdgeOps",
    "reverse",
    "factorization_count",
]

EPS = np.finfo(np.float64).eps
DEFAULT_BOOST = float(np.sqrt(EPS))

Meter = Callable[[], None] | None


# ---------------------------------------------------------------- numba kernels

@njit(nogil=True, cache=True)
def _gbtrf(ab, kl, wu, pivot, tiny, boost, ipiv):
    """In-place band LU.  Returns the boost count, or ``-(j + 1)`` if singular."""
    n = ab.shape[0]
    nboost = 0
    for j in range(n):
        last = min(j + kl, n - 1)
        if pivot:
            best = j
            bv = abs(ab[j, kl])
            for i in range(j + 1, last + 1):
                v = abs(ab[i, kl + j - i])
                if v > bv:
                    best = i
                    bv = v
            ipiv[j] = best
            if bv == 0.0:
                return -(j + 1)
            if best != j:
                cmax = min(j + wu, n - 1)
                for c in range(j, cmax + 1):
                    t = ab[j, kl + c - j]
                    ab[j, kl + c - j] = ab[best, kl + c - best]
                    ab[best, kl + c - best] = t
        else:
            ipiv[j] = j
            d = ab[j, kl]
            if abs(d) < tiny:
                ab[j, kl] = boost if d >= 0.0 else -boost
                nboost += 1
        piv = ab[j, kl]
        cmax = min(j + wu, n - 1)
        for i in range(j + 1, last + 1):
            l = ab[i, kl + j - i] / piv
            ab[i, kl + j - i] = l
            if l != 0.0:
                for c in range(j + 1, cmax + 1):
                    ab[i, kl + c - i] -= l * ab[j, kl + c - j]
    return nboost


@njit(nogil=True, cache=True)
def _lower(ab, ipiv, kl, B, r0, r1):
    # L^{-1} P over steps [r0, r1); rows of B are partition rows [r0, r0 + len(B))
    m = B.shape[1]
    top = r0 + B.shape[0]
    for j in range(r0, r1):
        r = ipiv[j]
        if r != j:
            for c in range(m):
                t = B[j - r0, c]
                B[j - r0, c] = B[r - r0, c]
                B[r - r0, c] = t
        for i in range(j + 1, min(j + kl, top - 1) + 1):
            l = ab[i, kl + j - i]
            if l != 0.0:
                for c in range(m):
                    B[i - r0, c] -= l * B[j - r0, c]


@njit(nogil=True, cache=True)
def _upper(ab, kl, wu, B, r0, r1):
    # U^{-1}, rows r1 - 1 down to r0; rows >= r1 are treated as zero
    m = B.shape[1]
    for i in range(r1 - 1, r0 - 1, -1):
        for c in range(1, min(wu, r1 - 1 - i) + 1):
            u = ab[i, kl + c]
            if u != 0.0:
                for q in range(m):
                    B[i - r0, q] -= u * B[i + c - r0, q]
        d = ab[i, kl]
        for q in range(m):
            B[i - r0, q] /= d


@njit(nogil=True, cache=True)
def _upper_t(ab, kl, wu, B, r0, r1):
    # U^{-T} (a downward sweep), rows r0 .. r1 - 1; rows < r0 are treated as zero
    m = B.shape[1]
    for i in range(r0, r1):
        d = ab[i, kl]
        for q in range(m):
            B[i - r0, q] /= d
        for c in range(1, min(wu, r1 - 1 - i) + 1):
            u = ab[i, kl + c]
            if u != 0.0:
                for q in range(m):
                    B[i + c - r0, q] -= u * B[i - r0, q]


@njit(nogil=True, cache=True)
def _lower_t(ab, ipiv, kl, B, r0, r1):
    # P^T L^{-T} (an upward sweep) over steps r1 - 1 down to r0
    m = B.shape[1]
    for j in range(r1 - 1, r0 - 1, -1):
        for i in range(j + 1, min(j + kl, r1 - 1) + 1):
            l = ab[i, kl + j - i]
            if l != 0.0:
                for q in range(m):
                    B[j - r0, q] -= l * B[i - r0, q]
        r = ipiv[j]
        if r != j:
            for q in range(m):
                t = B[j - r0, q]
                B[j - r0, q] = B[r - r0, q]
                B[r - r0, q] = t


# ---------------------------------------------------------------- factor types

@dataclass
class SweepCounter:
    """Full-sweep tallies for one partition (or one half of a dual partition)."""

    full_sweeps_factor: int = 0
    full_sweeps_solve: int = 0

    def meter(self, stage: str) -> Callable[[], None]:
        attr = "full_sweeps_factor" if stage == "factor" else "full_sweeps_solve"

        def tick():
            setattr(self, attr, getattr(self, attr) + 1)
        return tick


@dataclass(frozen=True, eq=False)
class LUFactors:
    """``P A = L U`` of one band block, in row storage."""

    n: int
    kl: int
    ku: int
    wu: int
    ab: np.ndarray
    pivots: np.ndarray
    pivoting: bool
    boost_count: int
    boost_eps: float
    boost_value: float

    def __post_init__(self):
        self.ab.flags.writeable = False
        self.pivots.flags.writeable = False

    # Natural-order primitives.  ``B`` holds rows [r0, r0 + len(B)) and is
    # modified in place.  ``first`` is the sweep applied first in a solve
    # (L^{-1}P, or U^{-T} when transposed); ``second`` finishes it.

    def first(self, B, r0=0, transpose=False, meter: Meter = None):
        r1 = r0 + B.shape[0]
        if transpose:
            _upper_t(self.ab, self.kl, self.wu, B, r0, r1)
        else:
            _lower(self.ab, self.pivots, self.kl, B, r0, r1)
        if meter is not None and r0 == 0 and r1 == self.n:
            meter()
        return B

    def second(self, B, r0=0, transpose=False, meter: Meter = None):
        r1 = r0 + B.shape[0]
        if transpose:
            _lower_t(self.ab, self.pivots, self.kl, B, r0, r1)
        else:
            _upper(self.ab, self.kl, self.wu, B, r0, r1)
        if meter is not None and r0 == 0 and r1 == self.n:
            meter()
        return B

    @property
    def pivot_slack(self) -> int:
        """Rows by which a truncated sweep must be widened to see row swaps."""
        return self.kl if self.pivoting else 0

    def unpack(self):
        """Dense ``(P, L, U)`` with ``P @ A == L @ U`` (for tests and debugging)."""
        n, kl = self.n, self.kl
        L = np.eye(n)
        U = np.zeros((n, n))
        perm = np.arange(n)
        for i in range(n):
            for c in range(self.ab.shape[1]):
                j = i - kl + c
                if 0 <= j < n and j >= i:
                    U[i, j] = self.ab[i, c]
        # replay the interchanges so L is expressed for the final permutation
        for j in range(n):
            r = self.pivots[j]
            if r != j:
                perm[[j, r]] = perm[[r, j]]
                L[[j, r], :j] = L[[r, j], :j]
            for i in range(j + 1, min(j + kl, n - 1) + 1):
                L[i, j] = self.ab[i, kl + j - i]
        P = np.eye(n)[perm]
        return P, L, U


@dataclass(frozen=True, eq=False)
class ULFactors:
    """``A = Q (P^T L U) Q`` with ``Q`` the anti-diagonal reversal.

    The reversed matrix ``Q A Q`` is formed by flipping the band storage along
    both axes and is then LU factored; applying ``Q`` to a block is a row flip.
    """

    inner: LUFactors

    @property
    def n(self):
        return self.inner.n

    @property
    def boost_count(self):
        return self.inner.boost_count

    @property
    def pivoting(self):
        return self.inner.pivoting


def _row_storage(A: BandedMatrix, wu: int, reverse: bool = False) -> np.ndarray:
    """Pack ``A`` (or ``Q A Q`` when ``reverse``) into zero-padded row storage.

    Reversing rows and columns maps row storage ``R`` of ``A`` to
    ``R[::-1, ::-1]``, so the reversal costs nothing beyond the packing copy.
    """
    n, kl, ku = A.n, A.kl, A.ku
    rows = np.zeros((n, kl + ku + 1))
    for d in range(-ku, kl + 1):
        # diagonal d: A(j + d, j) = data[ku + d, j] -> rows[j + d, kl - d]
        j0, j1 = max(0, -d), min(n, n - d)
        if j0 < j1:
            rows[j0 + d: j1 + d, kl - d] = A.data[ku + d, j0:j1]
    if reverse:
        rows = rows[::-1, ::-1]
        kl = ku
    ab = np.zeros((n, kl + 1 + wu))
    ab[:, :rows.shape[1]] = rows
    return ab


_factor_calls = [0]
_factor_lock = threading.Lock()


def factorization_count() -> int:
    """Band factorizations performed so far in this process."""
    return _factor_calls[0]


def _lu(A: BandedMatrix, pivoting, boost_eps, scale, reverse) -> LUFactors:
    boost_eps = DEFAULT_BOOST if boost_eps is None else float(boost_eps)
    if boost_eps <= 0:
        raise ValueError("boost_eps must be positive")
    if scale is None:
        scale = A.max_abs()
    scale = scale if scale > 0 else 1.0
    kl, ku = (A.ku, A.kl) if reverse else (A.kl, A.ku)
    wu = ku + (kl if pivoting else 0)
    ab = _row_storage(A, wu, reverse)
    ipiv = np.empty(A.n, dtype=np.int64)
    boost_value = boost_eps * scale
    with _factor_lock:
        _factor_calls[0] += 1
    status = _gbtrf(ab, kl, wu, bool(pivoting), EPS * scale, boost_value, ipiv)
    if status < 0:
        raise SingularMatrixError(f"exactly zero pivot column at row {-status - 1}")
    return LUFactors(A.n, kl, ku, wu, ab, ipiv, bool(pivoting), int(status),
                     boost_eps, boost_value)


def lu_factor(A: BandedMatrix, pivoting: bool = False, boost_eps: float | None = None,
              scale: float | None = None) -> LUFactors:
    """Band LU of ``A`` with partial pivoting or diagonal boosting.

    Without pivoting a pivot smaller than ``eps * scale`` is replaced by
    ``boost_eps * scale`` (keeping its sign); ``scale`` defaults to ``max|A|``.
    With pivoting the largest of the at most ``kl + 1`` in-band candidates is
    taken, ties going to the smallest row index.
    """
    return _lu(A, pivoting, boost_eps, scale, False)


def reverse(A: BandedMatrix) -> BandedMatrix:
    """``Q A Q``: rows and columns in reverse order (sub/super bands swap)."""
    return BandedMatrix(A.n, A.ku, A.kl, A.data[::-1, ::-1])


def ul_factor(A: BandedMatrix, pivoting: bool = False, boost_eps: float | None = None,
              scale: float | None = None) -> ULFactors:
    """``A = Q P^T L U Q``: LU of the reversed block, reversed while packing."""
    return ULFactors(_lu(A, pivoting, boost_eps, scale, True))


# ---------------------------------------------------------------- public sweeps

def _prep(B, n):
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    if vector:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != n:
        raise ValueError(f"expected a block with {n} rows, got shape {B.shape}")
    return np.array(B, order="C"), vector


def _check_zero_above(B, rows, what):
    if rows > 0 and np.any(B[:rows] != 0.0):
        raise ValueError(f"{what}: nonzero entries inside the declared zero region")


def sweep_lower(factors, B, start_row: int = 0, *, transpose: bool = False,
                counter: SweepCounter | None = None, validate: bool = False,
                stage: str = "solve"):
    """Downward sweep over ``B``, skipping the zero rows above ``start_row``.

    For :class:`LUFactors` this applies ``L^{-1} P`` (``U^{-T}`` when
    ``transpose``).  For :class:`ULFactors` the downward sweep is the second
    half of the solve: ``Q U^{-1} Q`` (``Q P^T L^{-T} Q`` when transposed).
    In pivoting mode the start is lowered by ``kl`` so swapped rows are seen.
    """
    meter = counter.meter(stage) if counter is not None else None
    if isinstance(factors, ULFactors):
        n = factors.n
        out, vector = _prep(B, n)
        if validate:
            _check_zero_above(out, start_row, "sweep_lower")
        f = factors.inner
        nat = np.ascontiguousarray(out[::-1])
        # original rows [start_row, n) are natural rows [0, n - start_row)
        r1 = n - start_row
        slack = f.pivot_slack if transpose else 0
        r1 = min(n, r1 + slack)
        f.second(nat[:r1] if r1 < n else nat, 0, transpose, None)
        if meter is not None and start_row == 0:
            meter()
        out = nat[::-1].copy()
        return out[:, 0] if vector else out
    f = factors
    n = f.n
    out, vector = _prep(B, n)
    if validate:
        _check_zero_above(out, start_row, "sweep_lower")
    r0 = max(0, start_row - (0 if transpose else f.pivot_slack))
    f.first(out[r0:], r0, transpose, None)
    if meter is not None and start_row == 0:
        meter()
    return out[:, 0] if vector else out


def sweep_upper(factors, B, stop_row: int | None = None, *, transpose: bool = False,
                counter: SweepCounter | None = None, validate: bool = False,
                stage: str = "solve"):
    """Upward sweep over ``B``, skipping the zero rows at and below ``stop_row``.

    Mirror of :func:`sweep_lower`: ``U^{-1}`` (``P^T L^{-T}``) for LU factors,
    the first half ``Q L^{-1} P Q`` (``Q U^{-T} Q``) for UL factors.
    """
    meter = counter.meter(stage) if counter is not None else None
    if isinstance(factors, ULFactors):
        n = factors.n
        stop = n if stop_row is None else stop_row
        out, vector = _prep(B, n)
        if validate and stop < n and np.any(out[stop:] != 0.0):
            raise ValueError("sweep_upper: nonzero entries inside the declared zero region")
        f = factors.inner
        nat = np.ascontiguousarray(out[::-1])
        r0 = n - stop
        if not transpose:
            r0 = max(0, r0 - f.pivot_slack)
        f.first(nat[r0:], r0, transpose, None)
        if meter is not None and stop == n:
            meter()
        out = nat[::-1].copy()
        return out[:, 0] if vector else out
    f = factors
    n = f.n
    stop = n if stop_row is None else stop_row
    out, vector = _prep(B, n)
    if validate and stop < n and np.any(out[stop:] != 0.0):
        raise ValueError("sweep_upper: nonzero entries inside the declared zero region")
    r1 = stop
    if transpose:
        r1 = min(n, r1 + f.pivot_slack)
    f.second(out[:r1], 0, transpose, None)
    if meter is not None and stop == n:
        meter()
    return out[:, 0] if vector else out


def solve_factored(factors, F, transpose: bool = False,
                   counter: SweepCounter | None = None, stage: str = "solve") -> np.ndarray:
    """Solve with existing LU or UL factors; two full sweeps either way."""
    meter = counter.meter(stage) if counter is not None else None
    if isinstance(factors, ULFactors):
        f = factors.inner
        out, vector = _prep(F, f.n)
        nat = np.ascontiguousarray(out[::-1])
        f.first(nat, 0, transpose, meter)
        f.second(nat, 0, transpose, meter)
        out = nat[::-1].copy()
    else:
        f = factors
        out, vector = _prep(F, f.n)
        f.first(out, 0, transpose, meter)
        f.second(out, 0, transpose, meter)
    return out[:, 0] if vector else out


# ---------------------------------------------------------------- edge solves

class EdgeOps:
    """Solves on a block coupled to one neighbour through ``k`` rows at an edge.

    An :class:`LUFactors` block is coupled at its bottom edge and a
    :class:`ULFactors` block at its top edge.  Either way the work is done on
    the LU factors in *natural* order (reversed for UL), where the coupling
    edge is at the bottom: a downward sweep that starts just above the edge,
    or an upward sweep that stops just below it, spans only ``O(k)`` rows.
    This is what gives first/last partitions (and each half of the 2x2
    kernel) their zero-full-sweep spikes and two-sweep solves.

    All inputs and outputs are in the block's original row order.
    """

    def __init__(self, factors, k: int):
        self.flip = isinstance(factors, ULFactors)
        self.f = factors.inner if self.flip else factors
        self.n = self.f.n
        self.k = k

    def _nat(self, X):
        X = X[::-1] if self.flip else X
        return np.array(X, dtype=np.float64, order="C")

    def _orig(self, X):
        return np.ascontiguousarray(X[::-1]) if self.flip else X

    def _edge_start(self):
        return max(0, self.n - self.k - self.f.pivot_slack)

    def _edge_block(self, E, m):
        r0 = self._edge_start()
        W = np.zeros((self.n - r0, m))
        W[W.shape[0] - self.k:] = self._nat(E)
        return W, r0

    def edge_rows(self, E, transpose=False, meter: Meter = None):
        """Edge ``k`` rows of ``A^{-1}`` applied to ``E`` placed at the edge."""
        m = E.shape[1]
        if self.k == 0:
            return np.zeros((0, m))
        W, r0 = self._edge_block(E, m)
        self.f.first(W, r0, transpose, meter)
        self.f.second(W, r0, transpose, meter)
        return self._orig(W[W.shape[0] - self.k:])

    def far_rows(self, E, transpose=False, meter: Meter = None):
        """Far-edge ``k`` rows of ``A^{-1}`` applied to ``E`` placed at the edge."""
        n, k, m = self.n, self.k, E.shape[1]
        if k == 0:
            return np.zeros((0, m))
        W = np.zeros((n, m))
        W[n - k:] = self._nat(E)
        r0 = self._edge_start()
        self.f.first(W[r0:], r0, transpose, meter)
        self.f.second(W, 0, transpose, meter)
        return self._orig(W[:k])

    def dstage(self, F, transpose=False, meter: Meter = None):
        """One full sweep over ``F``; returns the sweep state and the edge rows of the solve."""
        z = self._nat(F)
        self.f.first(z, 0, transpose, meter)
        if self.k == 0:
            return z, np.zeros((0, z.shape[1]))
        r0 = self._edge_start()
        tail = z[r0:].copy()
        self.f.second(tail, r0, transpose, meter)
        return z, self._orig(tail[tail.shape[0] - self.k:])

    def finish(self, z, E=None, transpose=False, meter: Meter = None):
        """Complete a :meth:`dstage` solve with ``E`` subtracted at the edge rows.

        ``z`` is consumed.  Returns ``A^{-1} (F - [0; E])`` for the ``F``
        given to :meth:`dstage`.
        """
        if E is not None and self.k:
            W, r0 = self._edge_block(E, z.shape[1])
            self.f.first(W, r0, transpose, meter)
            z[r0:] -= W
        self.f.second(z, 0, transpose, meter)
        return self._orig(z)
