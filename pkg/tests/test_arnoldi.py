import numpy as np
import pytest
from numpy.testing import assert_allclose

from phisolver.arnoldi import (
    ArnoldiDecomp,
    arnoldi_extend,
    compress_restart,
    decomposition_from_restart,
    null_direction,
    orthonormalize_columns,
    residual_direction,
    select_ritz_vectors,
    si_arnoldi,
    start_decomposition,
)
from phisolver.errors import BasisMismatch, InputError, RankDeficient
from phisolver.phikrylov import build_Tk
from phisolver.sparsemat import MatvecCounter, ShiftedSolver
from tests.conftest import diagonal_operator, random_operator


def _relation_error(A, D: ArnoldiDecomp) -> float:
    AV = A.to_dense() @ D.Vk
    return np.linalg.norm(AV - D.V @ D.Hbar) / max(np.linalg.norm(AV), 1e-300)


def test_arnoldi_relation_and_orthonormality(small_op, rng):
    counter = MatvecCounter()
    D = arnoldi_extend(small_op, start_decomposition(rng.standard_normal(small_op.n)), 10, counter)
    assert D.k == 10 and not D.breakdown
    assert counter.matvecs == 10
    assert _relation_error(small_op, D) <= 1e-13
    assert np.linalg.norm(D.V.T @ D.V - np.eye(11)) <= 1e-13
    assert np.allclose(np.tril(D.Hbar, -2), 0.0)


def test_arnoldi_extend_continues(small_op, rng):
    v = rng.standard_normal(small_op.n)
    D5 = arnoldi_extend(small_op, start_decomposition(v), 5)
    D10 = arnoldi_extend(small_op, D5, 10)
    ref = arnoldi_extend(small_op, start_decomposition(v), 10)
    assert_allclose(D10.Hbar, ref.Hbar, atol=1e-12)


def test_breakdown_on_invariant_subspace():
    A = diagonal_operator([1.0] * 10 + [2.0] * 10 + [5.0] * 10)
    D = arnoldi_extend(A, start_decomposition(np.ones(30)), 10)
    assert D.breakdown
    assert D.k == 3 and D.breakdown_step == 3
    assert D.V.shape == (30, 4)
    assert abs(D.h_sub) <= 1e-12 * D.norm_estimate


def test_zero_start_vector():
    with pytest.raises(InputError):
        start_decomposition(np.zeros(4))


def test_si_arnoldi_relation(small_op, rng):
    gamma = 0.2
    S = ShiftedSolver(small_op, gamma)
    counter = MatvecCounter()
    D = si_arnoldi(S, rng.standard_normal(small_op.n), 8, counter)
    assert counter.solves == 8 and counter.matvecs == 0
    Minv = np.linalg.inv(np.eye(small_op.n) + gamma * small_op.to_dense())
    assert np.linalg.norm(Minv @ D.Vk - D.V @ D.Hbar) <= 1e-12
    assert D.gamma == gamma


@pytest.mark.parametrize("gamma", [0.0, 0.05, 1.0])
def test_residual_direction_spans_null_space(small_op, rng, gamma):
    D = arnoldi_extend(small_op, start_decomposition(rng.standard_normal(small_op.n)), 7)
    w = residual_direction(D.Hbar, gamma)
    Ibar = np.vstack([np.eye(7), np.zeros((1, 7))])
    assert np.linalg.norm((Ibar + gamma * D.Hbar).T @ w) <= 1e-12 * np.linalg.norm(w)
    assert w[-1] == pytest.approx(-D.h_sub)
    if gamma == 0.0:
        assert np.all(w[:-1] == 0.0)


def test_null_direction_matches_closed_form(small_op, rng):
    D = arnoldi_extend(small_op, start_decomposition(rng.standard_normal(small_op.n)), 6)
    assert_allclose(null_direction(D.Hbar, 0.1), residual_direction(D.Hbar, 0.1), rtol=1e-10, atol=1e-12)


def test_orthonormalize_columns_drops_dependent(rng):
    X = rng.standard_normal((6, 3))
    X = np.column_stack([X, X[:, 0] + 2 * X[:, 1]])
    Q, kept = orthonormalize_columns(X)
    assert kept == [0, 1, 2]
    assert_allclose(Q.T @ Q, np.eye(3), atol=1e-14)


def test_select_ritz_vectors_smallest_magnitude():
    M = np.diag([5.0, -0.5, 3.0, 0.1, 2.0, 7.0])
    W = select_ritz_vectors(M, 3)
    assert W.shape == (6, 3)
    support = sorted(int(np.argmax(np.abs(W[:, j]))) for j in range(3))
    assert support == [1, 3, 4]


def test_select_ritz_vectors_conjugate_pair_grows_q():
    # наименьшие по модулю -- пара 0.1 +- 0.2i
    M = np.zeros((6, 6))
    M[:2, :2] = [[0.1, -0.2], [0.2, 0.1]]
    M[2:, 2:] = np.diag([1.0, 2.0, 3.0, 4.0])
    W = select_ritz_vectors(M, 1)
    assert W.shape == (6, 2)
    assert np.linalg.norm(W[2:]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 0.1])
def test_compress_restart_keeps_relation(rng, gamma):
    A = random_operator(rng, 50)
    D = arnoldi_extend(A, start_decomposition(rng.standard_normal(50)), 12)
    M = build_Tk(D.H, D.h_sub, gamma)
    n_vec = residual_direction(D.Hbar, gamma)
    basis = compress_restart(D, select_ritz_vectors(M, 4), n_vec)

    assert basis.q in (4, 5)
    assert_allclose(basis.Wq1.T @ basis.Wq1, np.eye(basis.q + 1), atol=1e-13)
    Vq = basis.Vq1[:, :basis.q]
    lhs = A.to_dense() @ Vq
    assert np.linalg.norm(lhs - basis.Vq1 @ basis.Hbar_q) <= 1e-10 * np.linalg.norm(lhs)

    # следующий цикл продолжается из сжатого разложения
    D2 = arnoldi_extend(A, decomposition_from_restart(basis, D), 12)
    assert D2.k == 12
    assert _relation_error(A, D2) <= 1e-10
    assert np.linalg.norm(D2.V.T @ D2.V - np.eye(13)) <= 1e-12


def test_compress_restart_rank_deficient(small_op, rng):
    D = arnoldi_extend(small_op, start_decomposition(rng.standard_normal(small_op.n)), 8)
    W = select_ritz_vectors(D.H, 2)
    W = np.column_stack([W, W[:, 0]])
    with pytest.warns(RankDeficient):
        basis = compress_restart(D, W, residual_direction(D.Hbar, 0.0))
    assert basis.q == W.shape[1] - 1


def test_compress_restart_residual_in_span(small_op, rng):
    D = arnoldi_extend(small_op, start_decomposition(rng.standard_normal(small_op.n)), 5)
    W = np.zeros((5, 1))
    W[0, 0] = 1.0
    n_vec = np.zeros(6)
    n_vec[0] = 1.0
    with pytest.raises(BasisMismatch):
        compress_restart(D, W, n_vec)
