"""SPIKE DS factorization and the recursive reduced-system factorization.

``A = D S`` with ``D`` the block diagonal of the partitions and ``S`` the
identity plus the spikes ``V_i = A_i^{-1} [0; Bhat_i]`` and
``W_i = A_i^{-1} [Chat_i; 0]``.  Only the ``k x k`` top and bottom tips of the
spikes are kept.  The first partition never forms ``V_1t`` and the last never
forms ``W_pb``: the matching reduced unknowns are read by no other equation,
so those tips are stored as zero and the rows decouple.

The reduced system over the tips is solved by SPIKE again: level ``l``
pairs neighbouring super-partitions of height ``h = 2k 2^(l-1)`` into the
blocks of ``D^[l]``, each reduced to a ``2k x 2k`` coupling solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import fork_join
from .band import BandedMatrix
from .kernels import (EdgeOps, SweepCounter, lu_factor, solve_factored, sweep_lower,
                      sweep_upper, ul_factor)
from .partition import (DEFAULT_K, Kind, PartitionPlan, compute_ratios, make_plan,
                        min_partition_size)
from .spike2x2 import CouplingBlock, factor_2x2, half_units, new_counters, spikes_2x2

__all__ = ["SpikeFactorization", "ReducedLevels", "factorize", "reduce_factorize"]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------- reduced system

@dataclass(frozen=True, eq=False)
class ReducedLevels:
    """Factored recursion levels of the reduced system.

    Attributes
    ----------
    p, k : int
        Partition count and tip size.
    spikes : tuple of (V, W)
        Per level, arrays of shape ``(p / 2^l, h, k)`` holding the full
        reduced-space spikes of each super-partition (level 0: ``h = 2k``,
        the stacked top and bottom tips).
    blocks : tuple of tuple of CouplingBlock
        Per level, one factored ``[[I, V_a,bot], [W_b,top, I]]`` per pair.
    """

    p: int
    k: int
    spikes: tuple
    blocks: tuple
    workers: int = 1

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def boost_count(self) -> int:
        return sum(b.boost_count for lev in self.blocks for b in lev)

    @property
    def block_count(self) -> int:
        return sum(len(lev) for lev in self.blocks)


def _dsolve(block: CouplingBlock, Va, Wb, ya, yb, k):
    """In place: ``[ya; yb] <- D_J^{-1} [ya; yb]``."""
    h = ya.shape[0]
    x = block.solve(np.vstack([ya[h - k:], yb[:k]]))
    ya -= Va @ x[k:]
    yb -= Wb @ x[:k]


def _dsolve_t(block: CouplingBlock, Va, Wb, ya, yb, k):
    """In place: ``[ya; yb] <- D_J^{-T} [ya; yb]`` (only the inner tips change)."""
    h = ya.shape[0]
    r1 = ya[h - k:] - Wb[k:].T @ yb[k:]
    r2 = yb[:k] - Va[:h - k].T @ ya[:h - k]
    z = block.solve(np.vstack([r1, r2]), transpose=True)
    ya[h - k:] = z[:k]
    yb[:k] = z[k:]


def reduce_factorize(tips, p: int, k: int, *, boost_eps: float | None = None,
                     workers: int = 1) -> ReducedLevels:
    """Factor the recursive reduced system from the spike tips.

    Parameters
    ----------
    tips : tuple (Vt, Vb, Wt, Wb)
        Arrays of shape ``(p, k, k)``.
    p : int
        Partition count, a power of two ``>= 2``.
    """
    if p < 2 or p & (p - 1):
        raise ValueError(f"p must be a power of two >= 2, got {p}")
    Vt, Vb, Wt, Wb = (np.asarray(a, dtype=np.float64) for a in tips)
    V = np.concatenate([Vt, Vb], axis=1)
    W = np.concatenate([Wt, Wb], axis=1)
    spikes, blocks = [], []
    nlev = p.bit_length() - 1
    for lev in range(nlev):
        nsup, h = V.shape[0], V.shape[1]
        spikes.append((_readonly(V), _readonly(W)))

        def pair_task(J, V=V, W=W, h=h, last=lev == nlev - 1):
            a, b = 2 * J, 2 * J + 1
            blk = CouplingBlock(V[a][h - k:], W[b][:k], boost_eps)
            if last:
                return blk, None, None
            # next-level spikes: D_J^{-1} [0; V_b] and D_J^{-1} [W_a; 0]
            va, vb = np.zeros((h, k)), V[b].copy()
            _dsolve(blk, V[a], W[b], va, vb, k)
            wa, wb = W[a].copy(), np.zeros((h, k))
            _dsolve(blk, V[a], W[b], wa, wb, k)
            return blk, np.vstack([va, vb]), np.vstack([wa, wb])

        out = fork_join([lambda J=J: pair_task(J) for J in range(nsup // 2)], workers, "red")
        blocks.append(tuple(o[0] for o in out))
        if lev < nlev - 1:
            V = np.stack([o[1] for o in out])
            W = np.stack([o[2] for o in out])
    return ReducedLevels(p, k, tuple(spikes), tuple(blocks), workers)


# ---------------------------------------------------------------- partitions

@dataclass(eq=False)
class _Part:
    """One partition: its factors plus corner blocks and spike tips."""

    index: int
    kind: str          # "first", "last", "single", "dual" or "serial"
    start: int
    stop: int
    factors: object
    bhat: np.ndarray | None
    chat: np.ndarray | None
    tips: tuple = ()
    factor_units: int = 0

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def boost_count(self) -> int:
        return self.factors.boost_count


def _factor_part(A: BandedMatrix, i: int, kind: Kind, start: int, stop: int, p: int, k: int,
                 pivoting: bool, boost_eps, scale, concurrent_halves: bool) -> _Part:
    Ai = A.submatrix(start, stop)
    m = stop - start
    bhat = A.block(slice(stop - k, stop), slice(stop, stop + k)) if i < p - 1 else None
    chat = A.block(slice(start, start + k), slice(start - k, start)) if i > 0 else None
    zero = np.zeros((k, k))
    if i == 0:
        f = lu_factor(Ai, pivoting, boost_eps, scale)
        c = SweepCounter()
        vb = EdgeOps(f, k).edge_rows(bhat, meter=c.meter("factor"))
        return _Part(i, "first", start, stop, f, bhat, None, (zero, vb, zero, zero),
                     c.full_sweeps_factor)
    if i == p - 1:
        f = ul_factor(Ai, pivoting, boost_eps, scale)
        c = SweepCounter()
        wt = EdgeOps(f, k).edge_rows(chat, meter=c.meter("factor"))
        return _Part(i, "last", start, stop, f, None, chat, (zero, zero, wt, zero),
                     c.full_sweeps_factor)
    if kind is Kind.INNER_DUAL:
        cs = new_counters()
        f = factor_2x2(Ai, pivoting, boost_eps, k=k, scale=scale,
                       concurrent=concurrent_halves, counters=cs)
        tips = spikes_2x2(f, bhat, chat, counters=cs)
        return _Part(i, "dual", start, stop, f, bhat, chat, tips, half_units(cs, "factor"))
    f = lu_factor(Ai, pivoting, boost_eps, scale)
    c = SweepCounter()
    G = np.zeros((m, k))
    G[m - k:] = bhat
    # V: the L-sweep may start at the B-hat rows, only the U-sweep is full
    G = sweep_lower(f, G, m - k, counter=c, stage="factor")
    V = sweep_upper(f, G, counter=c, stage="factor")
    G = np.zeros((m, k))
    G[:k] = chat
    W = solve_factored(f, G, counter=c, stage="factor")
    tips = (V[:k], V[m - k:], W[:k], W[m - k:])
    return _Part(i, "single", start, stop, f, bhat, chat, tips, c.full_sweeps_factor)


@dataclass(frozen=True, eq=False)
class SpikeFactorization:
    """Immutable DS factorization, reusable for forward and transpose solves.

    Attributes
    ----------
    n, kl, ku, k : int
        Shape of the factored matrix; ``k = max(kl, ku)``.
    plan : PartitionPlan
    parts : tuple
        Per-partition factors (``LUFactors`` for the first and single-thread
        partitions, ``Spike2x2Factors`` for dual-thread ones, ``ULFactors``
        for the last), corner blocks and spike tips.
    Vt, Vb, Wt, Wb : ndarray (p, k, k)
        Spike tips; ``Vt[0]``, ``Wb[p-1]`` and the absent ``W[0]``, ``V[p-1]``
        are zero.
    levels : ReducedLevels or None
        ``None`` for the serial ``p = 1`` plan.
    factor_sweeps : tuple of int
        Full-sweep units spent per partition during factorization.
    """

    n: int
    kl: int
    ku: int
    plan: PartitionPlan
    pivoting: bool
    boost_eps: float | None
    parts: tuple
    Vt: np.ndarray
    Vb: np.ndarray
    Wt: np.ndarray
    Wb: np.ndarray
    levels: ReducedLevels | None
    factor_sweeps: tuple = field(default=())

    @property
    def k(self) -> int:
        return max(self.kl, self.ku)

    @property
    def p(self) -> int:
        return self.plan.p

    @property
    def workers(self) -> int:
        return self.plan.p

    @property
    def boost_count(self) -> int:
        n = sum(part.boost_count for part in self.parts)
        return n + (self.levels.boost_count if self.levels is not None else 0)

    @property
    def tips(self):
        return self.Vt, self.Vb, self.Wt, self.Wb

    @property
    def bhat(self):
        return tuple(part.bhat for part in self.parts)

    @property
    def chat(self):
        return tuple(part.chat for part in self.parts)


def _resolve_plan(A: BandedMatrix, plan, n_rhs, K, regime) -> PartitionPlan:
    if isinstance(plan, PartitionPlan):
        if plan.bounds is None:
            raise ValueError("plan has no bounds; use make_plan or compute_sizes")
        if plan.bounds[0] != 0 or plan.bounds[-1] != A.n:
            raise ValueError(f"plan covers rows {plan.bounds[0]}..{plan.bounds[-1]}, "
                             f"matrix has {A.n}")
        return plan
    t = 1 if plan is None else int(plan)
    K = DEFAULT_K if K is None else K
    if n_rhs is None and regime is None:
        regime = "solve"
    R12, R13 = compute_ratios(K, n_rhs, max(A.k, 1), regime)
    return make_plan(A.n, A.kl, A.ku, t, R12, R13)


def factorize(A: BandedMatrix, plan: PartitionPlan | int | None = None, *,
              pivoting: bool = False, boost_eps: float | None = None,
              n_rhs: int | None = None, K: float | None = None,
              regime: str | None = None) -> SpikeFactorization:
    """DS-factor ``A`` over the partitions of ``plan``.

    Parameters
    ----------
    A : BandedMatrix
    plan : PartitionPlan or int, optional
        A sized plan, or a thread count from which one is built using
        :func:`compute_ratios` (``n_rhs``, ``K`` and ``regime`` are passed on;
        an unknown ``n_rhs`` defaults to the solve-dominated regime).
    pivoting : bool
        Partial pivoting inside each partition; otherwise pivots are boosted.
    boost_eps : float, optional
        Relative boost magnitude for non-pivoting mode.
    """
    plan = _resolve_plan(A, plan, n_rhs, K, regime)
    scale = A.max_abs()
    k = A.k
    if plan.p == 1:
        f = lu_factor(A, pivoting, boost_eps, scale)
        part = _Part(0, "serial", 0, A.n, f, None, None, (), 0)
        z = np.zeros((1, k, k))
        return SpikeFactorization(A.n, A.kl, A.ku, plan, pivoting, boost_eps, (part,),
                                  *(_readonly(z.copy()) for _ in range(4)), None, (0,))
    p = plan.p
    b = plan.bounds
    for i, kd in enumerate(plan.kinds):
        if b[i + 1] - b[i] < min_partition_size(kd, A.kl, A.ku):
            raise ValueError(f"partition {i} has {b[i + 1] - b[i]} rows, below the minimum")
    tasks = [lambda i=i: _factor_part(A, i, plan.kinds[i], b[i], b[i + 1], p, k, pivoting,
                                      boost_eps, scale, True)
             for i in range(p)]
    parts = tuple(fork_join(tasks, p, "part"))
    Vt, Vb, Wt, Wb = (_readonly(np.stack([np.asarray(pt.tips[j]) for pt in parts]))
                      for j in range(4))
    levels = reduce_factorize((Vt, Vb, Wt, Wb), p, k, boost_eps=boost_eps, workers=p // 2)
    return SpikeFactorization(A.n, A.kl, A.ku, plan, pivoting, boost_eps, parts,
                              Vt, Vb, Wt, Wb, levels,
                              tuple(pt.factor_units for pt in parts))
