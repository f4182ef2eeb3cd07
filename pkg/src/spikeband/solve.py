"""Forward and transpose solves on a :class:`SpikeFactorization`.

Forward: ``A X = D S X = F``.  The D-stage yields the tips of ``Y = D^{-1} F``,
the reduced system gives the tips of ``X``, and each partition recomputes its
interior as ``A_i^{-1} (F_i - [Chat_i X_{i-1,b}; 0; Bhat_i X_{i+1,t}])``.

Transpose: ``A^T X = S^T D^T X = F``.  ``Z = D^T X`` equals ``F`` away from
the tips; its tips solve ``S_red^T Z = G`` where ``G`` folds in one
transposed partial solve per partition.  Then ``X_i = A_i^{-T} Z_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import fork_join
from .band import BandedMatrix, _as_block, band_matmul
from .factor import ReducedLevels, SpikeFactorization, _dsolve, _dsolve_t
from .kernels import EdgeOps, SweepCounter, solve_factored
from .spike2x2 import new_counters, solve_2x2

__all__ = ["SolveStats", "RefineResult", "solve", "transpose_solve", "reduced_solve",
           "reduced_solve_transpose", "iterative_refine"]


@dataclass
class SolveStats:
    """Instrumentation filled in by a solve.

    ``partition_sweeps[i]`` is the number of full-sweep units partition ``i``
    spent; ``reduced_solves`` counts ``2k x 2k`` coupling solves.
    """

    partition_sweeps: list = field(default_factory=list)
    reduced_solves: int = 0


# ---------------------------------------------------------------- reduced system

def _flat_tips(tips, p, k):
    tips = np.asarray(tips, dtype=np.float64)
    if tips.ndim == 2:
        tips = tips[:, :, None]
    if tips.shape[:2] != (p, 2 * k):
        raise ValueError(f"expected tips of shape ({p}, {2 * k}, m), got {tips.shape}")
    return tips.reshape(p * 2 * k, -1).copy(), tips.shape[2]


def reduced_solve(levels: ReducedLevels, Ytips, stats: SolveStats | None = None) -> np.ndarray:
    """Solve the reduced system ``S_red X = Y`` for the tips.

    ``Ytips`` has shape ``(p, 2k, m)``: top tip rows then bottom tip rows of
    each partition.  Applies ``D^[1]^{-1}`` up to ``D^[r]^{-1}``, one
    ``2k x 2k`` solve per partition interface (``p - 1`` in all).
    """
    p, k = levels.p, levels.k
    y, m = _flat_tips(Ytips, p, k)
    for lev, (blocks, (V, W)) in enumerate(zip(levels.blocks, levels.spikes)):
        h = V.shape[1]

        def task(J, blocks=blocks, V=V, W=W, h=h):
            a, b = 2 * J, 2 * J + 1
            _dsolve(blocks[J], V[a], W[b], y[a * h:(a + 1) * h], y[b * h:(b + 1) * h], k)

        fork_join([lambda J=J: task(J) for J in range(len(blocks))], levels.workers, "red")
        if stats is not None:
            stats.reduced_solves += len(blocks)
    return y.reshape(p, 2 * k, m)


def reduced_solve_transpose(levels: ReducedLevels, Gtips,
                            stats: SolveStats | None = None) -> np.ndarray:
    """Solve ``S_red^T Y = G``: the transposed level solves in reverse order."""
    p, k = levels.p, levels.k
    y, m = _flat_tips(Gtips, p, k)
    for blocks, (V, W) in reversed(list(zip(levels.blocks, levels.spikes))):
        h = V.shape[1]

        def task(J, blocks=blocks, V=V, W=W, h=h):
            a, b = 2 * J, 2 * J + 1
            _dsolve_t(blocks[J], V[a], W[b], y[a * h:(a + 1) * h], y[b * h:(b + 1) * h], k)

        fork_join([lambda J=J: task(J) for J in range(len(blocks))], levels.workers, "red")
        if stats is not None:
            stats.reduced_solves += len(blocks)
    return y.reshape(p, 2 * k, m)


# ---------------------------------------------------------------- partition steps

class _Meter:
    """Per-partition sweep counting (pairs of half counters for dual partitions)."""

    def __init__(self, kind):
        self.dual = kind == "dual"
        self.c = new_counters() if self.dual else SweepCounter()

    def tick(self):
        return self.c.meter("solve")

    def units(self):
        if self.dual:
            return max(c.full_sweeps_solve for c in self.c)
        return self.c.full_sweeps_solve


def _full_solve(part, G, transpose, meter: _Meter):
    if part.kind == "dual":
        return solve_2x2(part.factors, G, transpose, counters=meter.c)
    return solve_factored(part.factors, G, transpose, counter=meter.c)


def _stage1(part, Fi, k, transpose, meter: _Meter):
    """First pass over one partition: returns (state, top tip, bottom tip)."""
    m = Fi.shape[1]
    n = part.size
    zero = np.zeros((k, m))
    if part.kind in ("first", "last"):
        ops = EdgeOps(part.factors, k)
        if transpose:
            Fi = Fi.copy()
            if part.kind == "first":
                Fi[n - k:] = 0.0
            else:
                Fi[:k] = 0.0
        z, edge = ops.dstage(Fi, transpose, meter.tick())
        return (ops, z), (zero, edge) if part.kind == "first" else (edge, zero)
    if transpose:
        Fi = Fi.copy()
        Fi[:k] = 0.0
        Fi[n - k:] = 0.0
    Y = _full_solve(part, Fi, transpose, meter)
    return None, (Y[:k], Y[n - k:])


def _stage2(part, state, Fi, k, transpose, prev_b, next_t, own_t, own_b, meter: _Meter):
    """Second pass: the partition's solution rows."""
    n = part.size
    if part.kind in ("first", "last"):
        ops, z = state
        if transpose:
            E = -(own_b if part.kind == "first" else own_t)
        elif part.kind == "first":
            E = part.bhat @ next_t
        else:
            E = part.chat @ prev_b
        return ops.finish(z, E, transpose, meter.tick())
    G = Fi.copy()
    if transpose:
        G[:k] = own_t
        G[n - k:] = own_b
    elif k:
        G[:k] -= part.chat @ prev_b
        G[n - k:] -= part.bhat @ next_t
    return _full_solve(part, G, transpose, meter)


def _run(fact: SpikeFactorization, F, transpose: bool, stats: SolveStats | None):
    F, vector = _as_block(F, fact.n)
    if fact.p == 1:
        c = SweepCounter()
        X = solve_factored(fact.parts[0].factors, F, transpose, counter=c)
        if stats is not None:
            stats.partition_sweeps = [c.full_sweeps_solve]
        return X[:, 0] if vector else X
    p, k, m = fact.p, fact.k, F.shape[1]
    parts = fact.parts
    meters = [_Meter(pt.kind) for pt in parts]
    blocks = [F[pt.start:pt.stop] for pt in parts]

    first = fork_join([lambda i=i: _stage1(parts[i], blocks[i], k, transpose, meters[i])
                       for i in range(p)], p, "part")
    states = [s for s, _ in first]
    tops = [t for _, (t, _) in first]
    bots = [b for _, (_, b) in first]

    tips = np.empty((p, 2 * k, m))
    if transpose:
        for i, pt in enumerate(parts):
            gt = blocks[i][:k].copy()
            gb = blocks[i][pt.size - k:].copy()
            if i > 0:
                gt -= parts[i - 1].bhat.T @ bots[i - 1]
            if i < p - 1:
                gb -= parts[i + 1].chat.T @ tops[i + 1]
            tips[i, :k], tips[i, k:] = gt, gb
        red = reduced_solve_transpose(fact.levels, tips, stats)
    else:
        for i in range(p):
            tips[i, :k], tips[i, k:] = tops[i], bots[i]
        red = reduced_solve(fact.levels, tips, stats)
    xt, xb = red[:, :k], red[:, k:]

    zero = np.zeros((k, m))

    def second(i):
        prev_b = xb[i - 1] if i > 0 else zero
        next_t = xt[i + 1] if i < p - 1 else zero
        return _stage2(parts[i], states[i], blocks[i], k, transpose, prev_b, next_t,
                       xt[i], xb[i], meters[i])

    X = np.vstack(fork_join([lambda i=i: second(i) for i in range(p)], p, "part"))
    if stats is not None:
        stats.partition_sweeps = [mt.units() for mt in meters]
    return X[:, 0] if vector else X


def solve(fact: SpikeFactorization, F, stats: SolveStats | None = None) -> np.ndarray:
    """Solve ``A X = F`` with an existing factorization."""
    return _run(fact, F, False, stats)


def transpose_solve(fact: SpikeFactorization, F, stats: SolveStats | None = None) -> np.ndarray:
    """Solve ``A^T X = F`` reusing the forward factorization."""
    return _run(fact, F, True, stats)


# ---------------------------------------------------------------- refinement

@dataclass
class RefineResult:
    """Outcome of :func:`iterative_refine`."""

    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    stagnated: bool
    history: list = field(default_factory=list)


def iterative_refine(fact: SpikeFactorization, A: BandedMatrix, F, X0=None,
                     max_iters: int = 10, tol: float = 1e-12,
                     transpose: bool = False) -> RefineResult:
    """Residual-correction loop ``X <- X + A^{-1} (F - A X)``.

    Stops when the relative residual reaches ``tol``, after ``max_iters``
    corrections, or when an iteration reduces the residual by less than
    a factor 1.1 (reported as ``stagnated``).
    """
    F, vector = _as_block(F, A.n)
    step = transpose_solve if transpose else solve
    X = step(fact, F) if X0 is None else _as_block(X0, A.n)[0].copy()
    fnorm = np.linalg.norm(F)
    if fnorm == 0.0:
        fnorm = 1.0

    def resid(X):
        R = F - band_matmul(A, X, transpose)
        return R, float(np.linalg.norm(R) / fnorm)

    R, res = resid(X)
    history = [res]
    its = 0
    stagnated = False
    while res > tol and its < max_iters:
        Xn = X + step(fact, R)
        its += 1
        Rn, new = resid(Xn)
        history.append(new)
        if new * 1.1 > res:
            stagnated = True
            if new < res:
                X, res = Xn, new
            break
        X, R, res = Xn, Rn, new
    out = X[:, 0] if vector else X
    return RefineResult(out, its, res, res <= tol, stagnated, history)
