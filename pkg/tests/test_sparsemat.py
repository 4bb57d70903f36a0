from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose, assert_array_equal

from phisolver.densela import dense_eig, hess_eig
from phisolver.errors import DimensionMismatch, InputError, ParseError, UnsupportedField
from phisolver.sparsemat import (
    CsrOperator,
    FunctionOperator,
    MatvecCounter,
    ShiftedSolver,
    gen_advdiff2d,
    gen_laplacian2d,
    gen_lesp,
    gen_ones,
    gen_rhs_poly,
    load_matrix_market,
    matvec,
    si_solve,
    write_matrix_market,
)
from tests.conftest import random_operator

FIXTURES = Path(__file__).parent / "fixtures"


def _write(tmp_path, text, name="m.mtx"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_csr_operator_validation():
    with pytest.raises(InputError):
        CsrOperator(2, np.array([0, 1, 2]), np.array([0, 5]), np.array([1.0, 1.0]))
    with pytest.raises(InputError):
        CsrOperator(2, np.array([0, 2, 2]), np.array([1, 0]), np.array([1.0, 1.0]))
    with pytest.raises(InputError):
        CsrOperator(2, np.array([0, 1, 2]), np.array([0, 1]), np.array([np.nan, 1.0]))


def test_matvec_counts_and_checks_shape(small_op, rng):
    counter = MatvecCounter()
    x = rng.standard_normal(small_op.n)
    y = matvec(small_op, x, counter)
    assert_allclose(y, small_op.to_dense() @ x)
    matvec(small_op, x, counter)
    assert counter.matvecs == 2
    with pytest.raises(DimensionMismatch):
        matvec(small_op, np.ones(small_op.n + 1), counter)
    assert counter.matvecs == 2


def test_function_operator(small_op, rng):
    F = FunctionOperator(small_op.n, small_op.apply, "wrapped")
    x = rng.standard_normal(small_op.n)
    assert_allclose(matvec(F, x), small_op.apply(x))
    assert_allclose(F.to_dense(), small_op.to_dense())
    assert not F.is_symmetric()


def test_load_coordinate_general(tmp_path):
    path = _write(tmp_path, """%%MatrixMarket matrix coordinate real general
% комментарий
3 3 4
1 1 2.0
2 3 -1.5
3 2 4.0
1 1 1.0
""")
    A = load_matrix_market(path)
    # дубликаты суммируются
    assert_allclose(A.to_dense(), [[3.0, 0, 0], [0, 0, -1.5], [0, 4.0, 0]])


@pytest.mark.parametrize("triangle", ["lower", "upper"])
def test_load_coordinate_symmetric(tmp_path, triangle):
    entry = "2 1 -1.0" if triangle == "lower" else "1 2 -1.0"
    path = _write(tmp_path, f"""%%MatrixMarket matrix coordinate real symmetric
2 2 3
1 1 2.0
{entry}
2 2 2.0
""")
    A = load_matrix_market(path)
    assert_allclose(A.to_dense(), [[2.0, -1.0], [-1.0, 2.0]])
    assert A.is_symmetric()


def test_load_array_format(tmp_path):
    path = _write(tmp_path, """%%MatrixMarket matrix array real general
2 2
1.0
3.0
2.0
4.0
""")
    assert_allclose(load_matrix_market(path).to_dense(), [[1.0, 2.0], [3.0, 4.0]])


def test_load_errors(tmp_path):
    with pytest.raises(UnsupportedField):
        load_matrix_market(_write(tmp_path, "%%MatrixMarket matrix coordinate complex general\n1 1 0\n"))
    with pytest.raises(DimensionMismatch):
        load_matrix_market(_write(tmp_path, "%%MatrixMarket matrix coordinate real general\n2 3 0\n"))
    with pytest.raises(ParseError) as exc:
        load_matrix_market(_write(tmp_path, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 x 2.0\n"))
    assert exc.value.line == 4
    with pytest.raises(ParseError) as exc:
        load_matrix_market(_write(tmp_path, "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n"))
    assert "line 3" in str(exc.value)
    with pytest.raises(ParseError):
        load_matrix_market(_write(tmp_path, "not a banner\n"))


def test_write_then_load(tmp_path, small_op):
    path = tmp_path / "op.mtx"
    write_matrix_market(small_op, path, comment="random operator")
    B = load_matrix_market(path)
    assert_array_equal(B.to_dense(), small_op.to_dense())


def test_lesp_golden_fixture():
    """
    -lesp(n): поддиагональ 1/(j+1), диагональ -(2j+3), наддиагональ j+1 -- со сменой знака
    """
    A = gen_lesp(4)
    assert_array_equal(A.to_dense(), load_matrix_market(FIXTURES / "lesp_n4.mtx").to_dense())
    assert_allclose(gen_lesp(2).to_dense(), [[5.0, -2.0], [-0.5, 7.0]])


def test_laplacian2d_structure():
    A = gen_laplacian2d(3)
    D = A.to_dense()
    assert A.n == 9
    assert A.is_symmetric()
    assert_allclose(np.diag(D), 64.0)
    assert D[0, 1] == -16.0 and D[0, 3] == -16.0 and D[0, 2] == 0.0
    assert np.all(np.linalg.eigvalsh(D) > 0)
    assert_allclose(gen_laplacian2d(3, scale=0.5).to_dense(), 0.5 * D)


def test_advdiff2d_and_vectors():
    A, u0 = gen_advdiff2d(4)
    assert A.n == 16 and u0.shape == (16,)
    assert not A.is_symmetric()
    assert np.all(u0 >= 0.3)
    v = gen_rhs_poly(4)
    assert v.shape == (16,) and np.all(v > 0)
    assert_array_equal(gen_ones(5), np.ones(5))


def test_shifted_solver_lu(small_op, rng):
    S = ShiftedSolver(small_op, 0.3)
    b = rng.standard_normal(small_op.n)
    counter = MatvecCounter()
    x = si_solve(S, b, counter)
    M = np.eye(small_op.n) + 0.3 * small_op.to_dense()
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert counter.solves == 1 and counter.matvecs == 0


def test_shifted_solver_gmres(rng):
    A = random_operator(rng, 60)
    F = FunctionOperator(A.n, A.apply)
    b = rng.standard_normal(A.n)
    x = ShiftedSolver(F, 0.1).solve(b)
    M = np.eye(A.n) + 0.1 * A.to_dense()
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_shifted_solver_rejects_nonpositive_gamma(small_op):
    with pytest.raises(InputError):
        ShiftedSolver(small_op, 0.0)


def test_from_sparse_rejects_rectangular():
    with pytest.raises(DimensionMismatch):
        CsrOperator.from_sparse(sp.random(3, 4, density=0.5))


def test_laplacian2d_analytic_spectrum():
    N = 10
    h = 1.0 / (N + 1)
    i = np.arange(1, N + 1)
    s = np.sin(i * np.pi * h / 2) ** 2
    expected = np.sort((4 / h ** 2) * (s[:, None] + s[None, :]).ravel())
    assert_allclose(np.linalg.eigvalsh(gen_laplacian2d(N).to_dense()), expected, rtol=1e-10)


def test_rhs_poly_values_and_symmetry():
    assert_allclose(gen_rhs_poly(1), [1.875])
    G = gen_rhs_poly(5).reshape(5, 5)
    assert_array_equal(G, G.T)


def test_advdiff2d_without_convection_is_scaled_laplacian():
    A, _ = gen_advdiff2d(5, eps1=0.03, beta1=0.0)
    assert_array_equal(A.to_dense(), gen_laplacian2d(5, scale=0.03).to_dense())


def test_advdiff2d_initial_value():
    _, u0 = gen_advdiff2d(2)
    h = 1.0 / 3.0
    expected = 256.0 * (h * h * (1 - h) * (1 - h)) ** 2 + 0.3
    assert u0[0] == pytest.approx(expected, rel=1e-14)
    assert u0[0] == pytest.approx(0.924295, abs=1e-6)
    assert_allclose(u0, expected, rtol=1e-14)


@pytest.mark.parametrize("N", range(2, 7))
def test_generators_have_stable_spectrum(N):
    """max Re eig(-A) <= 0 для всех задач на малых сетках."""
    ops = [gen_laplacian2d(N), gen_laplacian2d(N, scale=0.025), gen_advdiff2d(N)[0], gen_lesp(N)]
    for A in ops:
        assert dense_eig(-A.to_dense()).values.real.max() <= 1e-10, A.name


def test_lesp_eigenvalues_are_real():
    values = hess_eig(gen_lesp(20).to_dense()).values
    assert np.max(np.abs(values.imag)) <= 1e-8
    assert np.all(values.real > 0)


def test_matvec_bitwise_against_dense(rng):
    # целые значения: произведения и суммы точны при любом порядке сложения
    R = sp.random(30, 30, density=0.2, random_state=rng, data_rvs=lambda k: rng.integers(-8, 9, k))
    A = CsrOperator.from_sparse(R)
    x = rng.integers(-5, 6, 30).astype(float)
    assert_array_equal(A.apply(x), R.toarray() @ x)

    y = rng.standard_normal(30)
    assert_array_equal(A.apply(y), A.apply(y.copy()))


def test_tridiagonal_stencil():
    A = CsrOperator.from_sparse(sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(3, 3)))
    assert_array_equal(A.apply(np.ones(3)), [1.0, 0.0, 1.0])
