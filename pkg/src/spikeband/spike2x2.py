"""The two-partition SPIKE kernel.

A block is split at ``h = ceil(n/2)`` into a top half factored as LU and a
bottom half factored as UL.  Each half is then coupled to the other only
through ``k`` rows at its inner edge, so every half solve is one full sweep
down to the edge, a truncated sweep for the edge rows, a ``2k x 2k`` coupling
solve and one full sweep back.  The halves run on two threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._parallel import pair
from .band import BandedMatrix
from .kernels import EPS, EdgeOps, LUFactors, SweepCounter, ULFactors, lu_factor, ul_factor

__all__ = ["CouplingBlock", "Spike2x2Factors", "factor_2x2", "solve_2x2", "spikes_2x2"]


class CouplingBlock:
    """Factored ``[[I, V], [W, I]]`` with dense partial-pivoting LU.

    A pivot that still comes out (numerically) zero is boosted like the band
    kernels do, and counted in ``boost_count``.
    """

    def __init__(self, V: np.ndarray, W: np.ndarray, boost_eps: float | None = None):
        k = V.shape[0]
        self.k = k
        self.boost_count = 0
        if k == 0:
            self._lu = None
            return
        M = np.block([[np.eye(k), V], [W, np.eye(k)]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(M, check_finite=False)
        scale = float(np.abs(M).max())
        d = np.diagonal(lu)
        bad = np.abs(d) < EPS * scale
        if bad.any():
            beps = np.sqrt(EPS) if boost_eps is None else boost_eps
            idx = np.nonzero(bad)[0]
            lu[idx, idx] = np.where(d[idx] >= 0, 1.0, -1.0) * beps * scale
            self.boost_count = int(idx.size)
        self._lu = (lu, piv)

    @property
    def matrix_lu(self):
        return self._lu

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self._lu is None:
            return np.array(rhs, dtype=np.float64)
        return sla.lu_solve(self._lu, rhs, trans=1 if transpose else 0, check_finite=False)


@dataclass(frozen=True, eq=False)
class Spike2x2Factors:
    """Factors of one block for the two-partition kernel.

    Attributes
    ----------
    top : LUFactors
        Factors of the top half ``A[:h, :h]``.
    bottom : ULFactors
        Factors of the bottom half ``A[h:, h:]``.
    vtip, wtip : ndarray (k, k)
        Bottom tip of the top half's spike and top tip of the bottom half's.
    b_inner, c_inner : ndarray (k, k)
        Coupling corners ``A[h-k:h, h:h+k]`` and ``A[h:h+k, h-k:h]``.
    reduced : CouplingBlock
        ``[[I, vtip], [wtip, I]]``, factored once.
    """

    n: int
    h: int
    k: int
    top: LUFactors
    bottom: ULFactors
    vtip: np.ndarray
    wtip: np.ndarray
    b_inner: np.ndarray
    c_inner: np.ndarray
    reduced: CouplingBlock
    concurrent: bool = True

    @property
    def boost_count(self) -> int:
        return self.top.boost_count + self.bottom.boost_count + self.reduced.boost_count

    def _ops(self):
        return EdgeOps(self.top, self.k), EdgeOps(self.bottom, self.k)


def _meters(counters, stage):
    if counters is None:
        return None, None
    return counters[0].meter(stage), counters[1].meter(stage)


def factor_2x2(A: BandedMatrix, pivoting: bool = False, boost_eps: float | None = None,
               *, k: int | None = None, scale: float | None = None,
               concurrent: bool = True, counters=None) -> Spike2x2Factors:
    """Factor both halves concurrently and form the coupling tips.

    The tips use only truncated sweeps, so no full sweep is recorded.
    """
    n = A.n
    k = A.k if k is None else k
    h = (n + 1) // 2
    if h < max(1, k) or n - h < max(1, k):
        raise ValueError(f"block of {n} rows too small for the 2x2 kernel with k={k}")
    scale = A.max_abs() if scale is None else scale
    b_inner = A.block(slice(h - k, h), slice(h, h + k))
    c_inner = A.block(slice(h, h + k), slice(h - k, h))
    mt, mb = _meters(counters, "factor")

    def do_top():
        f = lu_factor(A.submatrix(0, h), pivoting, boost_eps, scale)
        return f, EdgeOps(f, k).edge_rows(b_inner, meter=mt)

    def do_bottom():
        f = ul_factor(A.submatrix(h, n), pivoting, boost_eps, scale)
        return f, EdgeOps(f, k).edge_rows(c_inner, meter=mb)

    (top, vtip), (bottom, wtip) = pair(do_top, do_bottom, concurrent)
    red = CouplingBlock(vtip, wtip, boost_eps)
    return Spike2x2Factors(n, h, k, top, bottom, vtip, wtip, b_inner, c_inner, red, concurrent)


def solve_2x2(fac: Spike2x2Factors, F, transpose: bool = False, counters=None) -> np.ndarray:
    """Solve ``A X = F`` (or ``A^T X = F``); two full sweeps per half."""
    F = np.asarray(F, dtype=np.float64)
    vector = F.ndim == 1
    if vector:
        F = F[:, None]
    if F.shape[0] != fac.n:
        raise ValueError(f"expected {fac.n} rows, got {F.shape[0]}")
    h, k = fac.h, fac.k
    e1, e2 = fac._ops()
    mt, mb = _meters(counters, "solve")
    F1, F2 = F[:h], F[h:]
    if transpose:
        # A^T = S^T D^T: partial solves without the unknown edge rows first
        F1 = F1.copy()
        F2 = F2.copy()
        F1[h - k:] = 0.0
        F2[:k] = 0.0
    (z1, y1), (z2, y2) = pair(lambda: e1.dstage(F1, transpose, mt),
                              lambda: e2.dstage(F2, transpose, mb), fac.concurrent)
    if transpose:
        g1 = F[h - k:h] - fac.c_inner.T @ y2
        g2 = F[h:h + k] - fac.b_inner.T @ y1
        z = fac.reduced.solve(np.vstack([g1, g2]), transpose=True)
        e_top, e_bot = -z[:k], -z[k:]
    else:
        x = fac.reduced.solve(np.vstack([y1, y2]))
        e_top, e_bot = fac.b_inner @ x[k:], fac.c_inner @ x[:k]
    X1, X2 = pair(lambda: e1.finish(z1, e_top, transpose, mt),
                  lambda: e2.finish(z2, e_bot, transpose, mb), fac.concurrent)
    X = np.vstack([X1, X2])
    return X[:, 0] if vector else X


def spikes_2x2(fac: Spike2x2Factors, Bhat=None, Chat=None, counters=None):
    """Spike tips of the enclosing block: ``(Vt, Vb, Wt, Wb)``.

    ``V = A^{-1} [0; Bhat]`` and ``W = A^{-1} [Chat; 0]``.  The top half spends
    one full sweep on ``V`` and two on ``W``, the bottom half the reverse, so
    the pair costs three full-sweep units.
    """
    n, h, k = fac.n, fac.h, fac.k
    m = k
    zero = np.zeros((k, m))
    Bhat = zero if Bhat is None else np.asarray(Bhat, dtype=np.float64)
    Chat = zero if Chat is None else np.asarray(Chat, dtype=np.float64)
    e1, e2 = fac._ops()
    mt, mb = _meters(counters, "factor")

    def top_w():
        G = np.zeros((h, m))
        G[:k] = Chat
        return e1.dstage(G, meter=mt)

    def bottom_v():
        G = np.zeros((n - h, m))
        G[n - h - k:] = Bhat
        return e2.dstage(G, meter=mb)

    (zw, yw), (zv, yv) = pair(top_w, bottom_v, fac.concurrent)
    xv = fac.reduced.solve(np.vstack([zero, yv]))  # V: top half has no right-hand side
    xw = fac.reduced.solve(np.vstack([yw, zero]))  # W: bottom half has none

    def top_finish():
        vt = -e1.far_rows(fac.b_inner @ xv[k:], meter=mt)
        wt = e1.finish(zw, fac.b_inner @ xw[k:], meter=mt)[:k]
        return vt, wt

    def bottom_finish():
        vb = e2.finish(zv, fac.c_inner @ xv[:k], meter=mb)[n - h - k:]
        wb = -e2.far_rows(fac.c_inner @ xw[:k], meter=mb)
        return vb, wb

    (vt, wt), (vb, wb) = pair(top_finish, bottom_finish, fac.concurrent)
    return vt, vb, wt, wb


def half_units(counters, stage: str) -> int:
    """Full-sweep units of a dual partition: the busier half's count."""
    attr = "full_sweeps_factor" if stage == "factor" else "full_sweeps_solve"
    return max(getattr(c, attr) for c in counters)


def new_counters():
    return SweepCounter(), SweepCounter()
