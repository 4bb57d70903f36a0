import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from phisolver.errors import DimensionMismatch, InputError, ParseError, SolveFailure, UnsupportedField

logger = logging.getLogger(__name__)


class MatvecCounter:
    """Счётчик умножений и решений, принадлежит одному запуску решателя."""

    def __init__(self):
        self._lock = threading.Lock()
        self.matvecs = 0
        self.solves = 0

    def tick(self, n: int = 1) -> None:
        with self._lock:
            self.matvecs += n

    def tick_solve(self, n: int = 1) -> None:
        with self._lock:
            self.solves += n


@dataclass(frozen=True)
class CsrOperator:
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    name: str = ""
    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        data = np.asarray(self.data, dtype=float)

        if indptr.shape != (self.n + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise InputError("row offsets inconsistent with stored entries")
        if np.any(np.diff(indptr) < 0):
            raise InputError("row offsets must be nondecreasing")
        if len(indices) != len(data):
            raise InputError("indices and values differ in length")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.n):
            raise InputError("column index out of range")
        if not np.all(np.isfinite(data)):
            raise InputError("stored values must be finite")

        rows = np.repeat(np.arange(self.n), np.diff(indptr))
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(indices)[same_row] <= 0):
            raise InputError("column indices must be strictly increasing within a row")

        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "_csr", sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n)))

    @classmethod
    def from_sparse(cls, mat, name: str = "") -> "CsrOperator":
        csr = sp.csr_matrix(mat, dtype=float)
        if csr.shape[0] != csr.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr.copy(), csr.indices.copy(), csr.data.copy(), name)

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._csr

    @property
    def nnz(self) -> int:
        return len(self.data)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.aslinearoperator(self._csr)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def norm1(self) -> float:
        if self.nnz == 0:
            return 0.0
        return float(abs(self._csr).sum(axis=0).max())

    def is_symmetric(self, tol: float = 0.0) -> bool:
        diff = self._csr - self._csr.T
        return diff.nnz == 0 or float(abs(diff).max()) <= tol


@dataclass(frozen=True)
class FunctionOperator:
    """Оператор, заданный только действием на вектор."""

    n: int
    func: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(x))

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)

    def to_dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])

    def norm1(self) -> float:
        return float(spla.onenormest(self.as_linear_operator()))

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return False


Operator = CsrOperator | FunctionOperator


def matvec(A: Operator, x: np.ndarray, counter: MatvecCounter | None = None) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (A.n,):
        raise DimensionMismatch(f"vector of shape {x.shape} does not match operator of size {A.n}")
    y = A.apply(x)
    if counter is not None:
        counter.tick()
    return y


# Matrix Market

def _banner(line: str) -> Tuple[str, str, str]:
    tokens = line.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        raise ParseError("missing or malformed %%MatrixMarket banner", 1)
    fmt, fld, symmetry = tokens[2:]
    if fmt not in ("coordinate", "array"):
        raise ParseError(f"unknown format '{fmt}'", 1)
    if fld not in ("real", "integer", "double"):
        raise UnsupportedField(f"field '{fld}' is not supported (real only)")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedField(f"symmetry '{symmetry}' is not supported")
    return fmt, fld, symmetry


def load_matrix_market(path) -> CsrOperator:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", 1)

    fmt, _, symmetry = _banner(lines[0])

    # строки данных с номерами (1-based), без комментариев и пустых
    body = [(no, ln.split()) for no, ln in enumerate(lines[1:], start=2)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise ParseError("missing size line", len(lines))

    size_no, size = body[0]
    try:
        dims = [int(tok) for tok in size]
    except ValueError:
        raise ParseError("size line must hold integers", size_no)
    expected = 3 if fmt == "coordinate" else 2
    if len(dims) != expected:
        raise ParseError(f"size line must have {expected} entries", size_no)
    nrows, ncols = dims[:2]
    if nrows != ncols:
        raise DimensionMismatch(f"operator must be square, got {nrows}x{ncols}")
    n = nrows

    rows, cols, vals = [], [], []
    entries = body[1:]

    if fmt == "coordinate":
        nnz = dims[2]
        if len(entries) != nnz:
            raise ParseError(f"expected {nnz} entries, found {len(entries)}", entries[-1][0] if entries else size_no)
        for no, tok in entries:
            if len(tok) != 3:
                raise ParseError("coordinate entry must be 'row col value'", no)
            try:
                i, j, v = int(tok[0]) - 1, int(tok[1]) - 1, float(tok[2])
            except ValueError:
                raise ParseError("malformed entry", no)
            if not (0 <= i < n and 0 <= j < n):
                raise ParseError(f"index ({i + 1}, {j + 1}) outside {n}x{n}", no)
            rows.append(i)
            cols.append(j)
            vals.append(v)
    else:
        # array: по столбцам; для symmetric -- только нижний треугольник
        positions = [(i, j) for j in range(n) for i in range(n) if symmetry == "general" or i >= j]
        if len(entries) != len(positions):
            raise ParseError(f"expected {len(positions)} values, found {len(entries)}",
                             entries[-1][0] if entries else size_no)
        for (i, j), (no, tok) in zip(positions, entries):
            if len(tok) != 1:
                raise ParseError("array entry must be a single value", no)
            try:
                v = float(tok[0])
            except ValueError:
                raise ParseError("malformed value", no)
            if v != 0.0:
                rows.append(i)
                cols.append(j)
                vals.append(v)

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))

    # coo -> csr суммирует дубликаты
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    logger.info("Loaded %s: n=%d, nnz=%d (%s, %s)", path, n, mat.nnz, fmt, symmetry)
    return CsrOperator.from_sparse(mat, name=path.stem)


def write_matrix_market(A: CsrOperator, path, comment: str | None = None) -> None:
    path = Path(path)
    lines = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        lines.extend(f"% {c}" for c in comment.splitlines())
    lines.append(f"{A.n} {A.n} {A.nnz}")
    for i in range(A.n):
        for jj in range(A.indptr[i], A.indptr[i + 1]):
            lines.append(f"{i + 1} {A.indices[jj] + 1} {float(A.data[jj])!r}")
    path.write_text("\n".join(lines) + "\n")
    logger.info("Wrote %s: n=%d, nnz=%d", path, A.n, A.nnz)


# Тестовые задачи

def _grid(N: int):
    h = 1.0 / (N + 1)
    pts = np.arange(1, N + 1) * h
    # X[j, i] = x_i, Y[j, i] = y_j; ravel даёт индекс j*N + i
    return np.meshgrid(pts, pts)


def _second_difference(N: int) -> sp.spmatrix:
    inv_h2 = float((N + 1) ** 2)
    return sp.diags([-inv_h2, 2.0 * inv_h2, -inv_h2], [-1, 0, 1], shape=(N, N))


def _negative_laplacian(N: int) -> sp.spmatrix:
    T = _second_difference(N)
    eye = sp.identity(N)
    return sp.kron(eye, T) + sp.kron(T, eye)


def gen_laplacian2d(N: int, scale: float = 1.0) -> CsrOperator:
    if N < 1:
        raise InputError("laplacian2d needs N >= 1")
    A = scale * _negative_laplacian(N)
    return CsrOperator.from_sparse(A, name=f"laplacian2d(N={N}, scale={scale:g})")


def gen_advdiff2d(N: int, eps1: float = 0.02, beta1: float = -0.02) -> Tuple[CsrOperator, np.ndarray]:
    """u_t = eps1*(u_xx + u_yy) - beta1*(u_x + u_y), u' = -Au; центральные разности."""
    if N < 2:
        raise InputError("advdiff2d needs N >= 2")
    half_inv_h = (N + 1) / 2.0
    D = sp.diags([-half_inv_h, half_inv_h], [-1, 1], shape=(N, N))
    eye = sp.identity(N)
    A = eps1 * _negative_laplacian(N) + beta1 * (sp.kron(eye, D) + sp.kron(D, eye))

    X, Y = _grid(N)
    u0 = 256.0 * (X * Y * (1 - X) * (1 - Y)) ** 2 + 0.3
    return CsrOperator.from_sparse(A, name=f"advdiff2d(N={N})"), u0.ravel()


def gen_lesp(n: int) -> CsrOperator:
    """A = -lesp(n): lesp = tridiag(1/(j+1), -(2j+3), j+1)."""
    if n < 2:
        raise InputError("lesp needs n >= 2")
    j = np.arange(1, n)
    sub = 1.0 / (j + 1)
    diag = -(2.0 * np.arange(1, n + 1) + 3.0)
    sup = (j + 1).astype(float)
    T = sp.diags([sub, diag, sup], [-1, 0, 1], shape=(n, n))
    return CsrOperator.from_sparse(-T, name=f"lesp(n={n})")


def gen_rhs_poly(N: int) -> np.ndarray:
    if N < 1:
        raise InputError("rhs_poly needs N >= 1")
    X, Y = _grid(N)
    return (30.0 * X * (1 - X) * Y * (1 - Y)).ravel()


def gen_ones(n: int) -> np.ndarray:
    return np.ones(n)


class ShiftedSolver:
    """Решение (I + gamma*A) x = b: разреженный LU, для операторов без матрицы -- GMRES."""

    GMRES_RESTART = 50
    GMRES_MAX_CYCLES = 200

    def __init__(self, A: Operator, gamma: float):
        if gamma <= 0:
            raise InputError("shift gamma must be positive")
        self.A = A
        self.gamma = float(gamma)
        self._lu = None

        if isinstance(A, CsrOperator):
            M = (sp.identity(A.n, format="csc") + self.gamma * A.matrix.tocsc()).tocsc()
            try:
                self._lu = spla.splu(M)
            except RuntimeError as e:
                raise SolveFailure(f"sparse LU of I+gamma*A failed: {e}") from e
            logger.debug("Factorized I+%.3g*A (n=%d)", self.gamma, A.n)

    def _apply_shifted(self, x: np.ndarray) -> np.ndarray:
        return x + self.gamma * self.A.apply(x)

    def solve(self, b: np.ndarray, counter: MatvecCounter | None = None) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.A.n,):
            raise DimensionMismatch(f"rhs of shape {b.shape} does not match operator of size {self.A.n}")
        nb = float(np.linalg.norm(b))
        if counter is not None:
            counter.tick_solve()
        if nb == 0.0:
            return np.zeros_like(b)

        if self._lu is not None:
            x = self._lu.solve(b)
            r = b - self._apply_shifted(x)
            if np.linalg.norm(r) > 1e-10 * nb:
                # один шаг уточнения
                x = x + self._lu.solve(r)
                r = b - self._apply_shifted(x)
                if np.linalg.norm(r) > 1e-10 * nb:
                    logger.warning("Shifted LU solve residual %.3e above 1e-10", np.linalg.norm(r) / nb)
            return x
        return self._gmres(b, nb)

    def _gmres(self, b: np.ndarray, nb: float) -> np.ndarray:
        op = spla.LinearOperator((self.A.n, self.A.n), matvec=self._apply_shifted, dtype=float)
        x = np.zeros_like(b)
        prev = nb
        for cycle in range(self.GMRES_MAX_CYCLES):
            x, _ = spla.gmres(op, b, x0=x, rtol=1e-11, atol=0.0, restart=self.GMRES_RESTART, maxiter=1)
            res = float(np.linalg.norm(b - op.matvec(x)))
            if res <= 1e-10 * nb:
                return x
            if res > 0.5 * prev:
                raise SolveFailure(
                    f"GMRES stagnated: relative residual {res / nb:.3e} not halved over {self.GMRES_RESTART} iterations"
                )
            prev = res
        raise SolveFailure(f"GMRES did not reach 1e-10 in {self.GMRES_MAX_CYCLES} restart cycles")


def si_solve(S: ShiftedSolver, b: np.ndarray, counter: MatvecCounter | None = None) -> np.ndarray:
    return S.solve(b, counter)
