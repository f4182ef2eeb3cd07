import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeband import BandedMatrix, generate_banded, oracle_solve
from spikeband.spike2x2 import (CouplingBlock, factor_2x2, half_units, new_counters,
                                solve_2x2, spikes_2x2)

from conftest import rand_matrix, rand_rhs, rel_err


def _block_diagonal(n, k, seed):
    D = rand_matrix(n, k, seed=seed).to_dense()
    h = (n + 1) // 2
    D[:h, h:] = 0.0
    D[h:, :h] = 0.0
    return BandedMatrix.from_dense(D, k, k)


def test_split_point_is_ceil_half():
    assert factor_2x2(rand_matrix(41, 2)).h == 21
    assert factor_2x2(rand_matrix(40, 2)).h == 20


def test_block_diagonal_has_zero_tips():
    fac = factor_2x2(_block_diagonal(40, 3, 1))
    assert not fac.vtip.any() and not fac.wtip.any()


def test_identity_reduced_block():
    fac = factor_2x2(BandedMatrix.from_dense(np.eye(20), 2, 2))
    lu, piv = fac.reduced.matrix_lu
    np.testing.assert_array_equal(lu, np.eye(4))
    F = rand_rhs(20, 2)
    np.testing.assert_array_equal(solve_2x2(fac, F), F)


@pytest.mark.parametrize("piv", [False, True])
def test_random_solve_matches_oracle(piv):
    A = rand_matrix(40, 2, seed=3)
    F = rand_rhs(40, 3)
    fac = factor_2x2(A, piv)
    for trans in (False, True):
        X = solve_2x2(fac, F, trans)
        assert rel_err(X, oracle_solve(A, F, trans)) <= 1e-12


def test_zero_rhs():
    fac = factor_2x2(rand_matrix(30, 2))
    assert not solve_2x2(fac, np.zeros((30, 2))).any()


def test_decoupled_equals_half_solves():
    A = _block_diagonal(50, 3, 4)
    F = rand_rhs(50, 2)
    X = solve_2x2(factor_2x2(A), F)
    h = 25
    top = oracle_solve(A.submatrix(0, h), F[:h])
    bot = oracle_solve(A.submatrix(h, 50), F[h:])
    assert rel_err(X, np.vstack([top, bot])) <= 1e-13


def test_symmetric_transpose_equals_forward():
    D = rand_matrix(36, 3, seed=5).to_dense()
    S = BandedMatrix.from_dense(D + D.T, 3, 3)
    fac = factor_2x2(S)
    F = rand_rhs(36, 2)
    assert rel_err(solve_2x2(fac, F, True), solve_2x2(fac, F)) <= 1e-13


def test_sweep_budget():
    A = rand_matrix(80, 4)
    counters = new_counters()
    fac = factor_2x2(A, counters=counters)
    assert half_units(counters, "factor") == 0  # tips use truncated sweeps only
    Bhat = rand_rhs(4, 4, 7)
    Chat = rand_rhs(4, 4, 8)
    spikes_2x2(fac, Bhat, Chat, counters)
    assert half_units(counters, "factor") == 3
    for trans in (False, True):
        c = new_counters()
        solve_2x2(fac, rand_rhs(80), trans, counters=c)
        assert [x.full_sweeps_solve for x in c] == [2, 2]


def test_zero_corners_give_zero_spikes():
    fac = factor_2x2(rand_matrix(40, 2))
    for tip in spikes_2x2(fac):
        assert not np.any(tip)


@pytest.mark.parametrize("piv", [False, True])
def test_spikes_match_full_spike_solves(piv):
    n, k = 60, 3
    A = rand_matrix(n, k, dd=0.8, seed=9)
    Bhat, Chat = rand_rhs(k, k, 1), rand_rhs(k, k, 2)
    vt, vb, wt, wb = spikes_2x2(factor_2x2(A, piv), Bhat, Chat)
    RV = np.zeros((n, k))
    RV[n - k:] = Bhat
    RW = np.zeros((n, k))
    RW[:k] = Chat
    V, W = oracle_solve(A, RV), oracle_solve(A, RW)
    for got, ref in ((vt, V[:k]), (vb, V[n - k:]), (wt, W[:k]), (wb, W[n - k:])):
        assert np.abs(got - ref).max() <= 1e-13 * np.abs(V).max() + 1e-13 * np.abs(W).max()


def test_too_small_block_rejected():
    with pytest.raises(ValueError):
        factor_2x2(rand_matrix(6, 4))


def test_coupling_block_boosts_singular():
    V = np.array([[1.0]])
    blk = CouplingBlock(V, np.array([[1.0]]))  # [[1, 1], [1, 1]]
    assert blk.boost_count == 1
    assert CouplingBlock(np.zeros((0, 0)), np.zeros((0, 0))).solve(np.ones((0, 1))).shape == (0, 1)


@given(n=st.integers(34, 512), k=st.integers(1, 8), piv=st.booleans(),
       trans=st.booleans(), seed=st.integers(0, 10_000), dd=st.floats(1.1, 4.0))
def test_property_oracle_equivalence(n, k, piv, trans, seed, dd):
    A = generate_banded(n, k, k, dd, seed)
    F = rand_rhs(n, 2, seed)
    X = solve_2x2(factor_2x2(A, piv), F, trans)
    R = np.linalg.norm(oracle_solve(A, F, trans) - X) / np.linalg.norm(X)
    assert R <= 1e-12
