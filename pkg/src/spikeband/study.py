"""Condition estimation and the residual-versus-condition accuracy study."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .band import BandedMatrix, OracleFactors, generate_banded, relative_residual
from .factor import factorize
from .solve import solve

__all__ = ["estimate_condition", "singular_dd_values", "study_matrices", "accuracy_rows",
           "AccuracyRow", "check_accuracy", "SOLVERS"]

SOLVERS = ("spike-nopivot", "spike-pivot", "oracle-pivot")
DOMINANT_DELTAS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
WEAK_DELTAS = (1e-1, 1e-2, 1e-4, 1e-6)


def estimate_condition(A: BandedMatrix, oracle: OracleFactors | None = None) -> float:
    """1-norm condition estimate ``||A||_1 * est(||A^{-1}||_1)``.

    ``||A^{-1}||_1`` comes from the block 1-norm power estimator applied to
    oracle solves, which is accurate to a small factor.
    """
    oracle = OracleFactors(A, True) if oracle is None else oracle
    n = A.n
    op = spla.LinearOperator((n, n), matvec=lambda x: oracle.solve(x),
                             rmatvec=lambda x: oracle.solve(x, transpose=True),
                             matmat=lambda X: oracle.solve(X), dtype=np.float64)
    return float(spla.onenormest(op) * A.one_norm())


def singular_dd_values(n: int, kl: int, ku: int, seed: int) -> np.ndarray:
    """The ``dd > 0`` for which ``generate_banded(n, kl, ku, dd, seed)`` is singular.

    The generated matrix is ``Off + dd S`` with ``S`` the diagonal of column
    sums, singular exactly when ``-dd`` is an eigenvalue of ``Off S^{-1}``.
    Returned ascending.  Dense eigenvalues: intended for desk-scale ``n``.
    """
    A = generate_banded(n, kl, ku, 1.0, seed)
    dense = A.to_dense()
    s = np.diag(dense).copy()
    if np.any(s == 0):
        raise ValueError("generator produced an empty column; no dd family exists")
    off = dense - np.diag(s)
    lam = sla.eigvals(off / s[None, :])
    real = lam[np.abs(lam.imag) <= 1e-9 * np.abs(lam).max()].real
    return np.sort(-real[real < 0])


def study_matrices(n: int, k: int, seed: int):
    """The study's ``(family, delta, dd)`` list, fixed ahead of any solve.

    ``dominant`` approaches the largest singular ``dd`` from above, so the
    matrix keeps a strong diagonal while its condition number grows like
    ``1/delta``.  The ``weak`` families sit just above the smallest, lower
    quartile and median singular ``dd``, where the diagonal is small and
    elimination without pivoting suffers growth.
    """
    dd_star = singular_dd_values(n, k, k, seed)
    if dd_star.size == 0:
        raise ValueError("no singular dd found for this seed")
    out = [("dominant", d, float(dd_star[-1] * (1 + d))) for d in DOMINANT_DELTAS]
    for name, idx in (("weak-min", 0), ("weak-q1", dd_star.size // 4),
                      ("weak-median", dd_star.size // 2)):
        out += [(name, d, float(dd_star[idx] * (1 + d))) for d in WEAK_DELTAS]
    return out


@dataclass
class AccuracyRow:
    family: str
    delta: float
    dd: float
    cond: float
    solver: str
    threads: int
    residual: float


def accuracy_rows(n: int, k: int, seed: int, threads: int = 2, matrices=None):
    """Run every solver on every study matrix; one row per (matrix, solver)."""
    matrices = study_matrices(n, k, seed) if matrices is None else matrices
    rng = np.random.default_rng(seed)
    rows = []
    for family, delta, dd in matrices:
        A = generate_banded(n, k, k, dd, seed)
        oracle = OracleFactors(A, True)
        cond = estimate_condition(A, oracle)
        F = rng.standard_normal((n, 1))
        res = {}
        for solver in SOLVERS:
            if solver == "oracle-pivot":
                X = oracle.solve(F)
            else:
                fact = factorize(A, threads, pivoting=solver == "spike-pivot")
                X = solve(fact, F)
            res[solver] = relative_residual(A, X, F)
            rows.append(AccuracyRow(family, delta, dd, cond, solver, threads, res[solver]))
    return rows


def check_accuracy(rows, cond_ok: float = 1e5, res_ok: float = 1e-10, ratio: float = 10.0,
                   cond_bad: float = 1e8):
    """The three study checks.

    Returns ``(all_good, pivot_close, nopivot_worse)``:
    every solver reaches ``res_ok`` when ``cond <= cond_ok``; pivoting SPIKE
    stays within ``ratio`` of the oracle everywhere; and somewhere above
    ``cond_bad`` non-pivoting SPIKE is at least ``ratio`` times worse than
    pivoting SPIKE.
    """
    by = {}
    for r in rows:
        by.setdefault((r.family, r.delta), {})[r.solver] = r
    all_good = all(r.residual <= res_ok for r in rows if r.cond <= cond_ok)
    pivot_close = all(g["spike-pivot"].residual <= ratio * g["oracle-pivot"].residual
                      for g in by.values())
    above = [g for g in by.values() if g["oracle-pivot"].cond > cond_bad]
    nopivot_worse = any(g["spike-nopivot"].residual >= ratio * g["spike-pivot"].residual
                        for g in above)
    return all_good, pivot_close, nopivot_worse
