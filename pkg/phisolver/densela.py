"""
Плотные ядра для малых проекционных задач (k порядка десятков).

Матрицы здесь -- обычные numpy.ndarray; функции чистые и не меняют входы.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg as la

from phisolver.errors import DimensionMismatch, InputError, NoConvergence, Overflow, SingularMatrix

logger = logging.getLogger(__name__)

TINY = 1e-300
EXPM_MAX_NORM = 1e8

# Коэффициенты диагональной аппроксимации Паде степени 13
PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
THETA13 = 5.371920351148152


@dataclass(frozen=True)
class EigenDecomp:
    values: np.ndarray
    vectors: np.ndarray
    # пары индексов (j, p), j < p, для комплексно-сопряжённых собственных значений
    conjugate_pairs: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def partner(self, j: int) -> int | None:
        for a, b in self.conjugate_pairs:
            if a == j:
                return b
            if b == j:
                return a
        return None

    def is_real(self, j: int) -> bool:
        return self.partner(j) is None


def as_square(M, name: str = "M") -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    return M


def one_norm(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(M), axis=0)))


def lu_solve(M, B) -> np.ndarray:
    """Решает MX = B через LU с частичным выбором ведущего элемента."""
    M = as_square(M)
    B = np.asarray(B)
    if B.shape[0] != M.shape[0]:
        raise DimensionMismatch(f"rhs has {B.shape[0]} rows, matrix is {M.shape[0]}x{M.shape[0]}")

    scale = max(float(np.linalg.norm(M, "fro")), TINY)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(M, check_finite=False)

    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() <= 1e-14 * scale:
        raise SingularMatrix(f"pivot {pivots.min():.3e} below 1e-14*||M||_F={1e-14 * scale:.3e}")

    return la.lu_solve((lu, piv), B, check_finite=False)


def _check_hessenberg(H: np.ndarray) -> None:
    below = np.tril(H, -2)
    scale = max(float(np.linalg.norm(H, "fro")), TINY)
    if below.size and np.max(np.abs(below)) > 1e-14 * scale:
        raise InputError("matrix is not upper Hessenberg")


def _triangular_eigvec(T: np.ndarray, j: int) -> np.ndarray:
    # обратная подстановка по треугольной форме Шура с возмущением малых ведущих элементов
    k = T.shape[0]
    lam = T[j, j]
    smin = max(np.finfo(float).eps * max(abs(lam), 1.0) * 1e-2, TINY)
    y = np.zeros(k, dtype=complex)
    y[j] = 1.0
    for i in range(j - 1, -1, -1):
        d = T[i, i] - lam
        if abs(d) < smin:
            d = smin
        y[i] = -(T[i, i + 1:j + 1] @ y[i + 1:j + 1]) / d
    return y


def _inverse_iteration(H: np.ndarray, lam: complex, start: np.ndarray, steps: int = 3) -> np.ndarray:
    k = H.shape[0]
    shift = lam + 1e-10 * max(float(np.linalg.norm(H, "fro")), 1.0)
    A = H.astype(complex) - shift * np.eye(k)
    lu_piv = la.lu_factor(A, check_finite=False)
    x = start.astype(complex)
    for _ in range(steps):
        x = la.lu_solve(lu_piv, x, check_finite=False)
        x = x / np.linalg.norm(x)
    return x


def _pair_conjugates(values: np.ndarray, tol: float) -> List[Tuple[int, int]]:
    pairs = []
    used = set()
    for j, lam in enumerate(values):
        if j in used or abs(lam.imag) <= tol * (1 + abs(lam)):
            continue
        candidates = [
            p for p in range(len(values))
            if p != j and p not in used and abs(values[p] - np.conj(lam)) <= 1e-8 * (1 + abs(lam))
        ]
        if not candidates:
            continue
        p = min(candidates, key=lambda p: abs(values[p] - np.conj(lam)))
        pairs.append((min(j, p), max(j, p)))
        used.update((j, p))
    return pairs


def hess_eig(H) -> EigenDecomp:
    """
    Собственные пары вещественной верхней хессенберговой матрицы.

    Сдвиговый QR (LAPACK через scipy.linalg.schur) даёт вещественную форму Шура,
    векторы -- обратной подстановкой по комплексной треугольной форме.
    """
    H = as_square(H, "H")
    if np.iscomplexobj(H):
        raise InputError("hess_eig expects a real matrix")
    k = H.shape[0]
    if k == 0:
        return EigenDecomp(np.zeros(0, dtype=complex), np.zeros((0, 0), dtype=complex))
    _check_hessenberg(H)

    try:
        T, Z = la.schur(H, output="real")
    except la.LinAlgError as e:
        raise NoConvergence(f"QR iteration did not converge within {30 * k} sweeps: {e}") from e
    T, Z = la.rsf2csf(T, Z)

    values = np.diag(T).copy()
    vectors = np.zeros((k, k), dtype=complex)
    normH = max(float(np.linalg.norm(H, "fro")), TINY)

    for j in range(k):
        x = Z @ _triangular_eigvec(T, j)
        x /= np.linalg.norm(x)
        if np.linalg.norm(H @ x - values[j] * x) > 1e-10 * normH:
            logger.debug("Back-substitution eigenvector %d inaccurate, switching to inverse iteration", j)
            x = _inverse_iteration(H, values[j], x)
        vectors[:, j] = x

    pairs = _pair_conjugates(values, 1e-10)
    paired = set()
    for j, p in pairs:
        # точная сопряжённость для вещественного входа
        upper, lower = (j, p) if values[j].imag > 0 else (p, j)
        values[lower] = np.conj(values[upper])
        vectors[:, lower] = np.conj(vectors[:, upper])
        paired.update((j, p))

    for j in set(range(k)) - paired:
        # вещественное собственное значение -- вещественный вектор
        values[j] = complex(values[j].real, 0.0)
        x = vectors[:, j]
        pivot = x[np.argmax(np.abs(x))]
        x = x * (abs(pivot) / pivot)
        vectors[:, j] = x.real / np.linalg.norm(x.real)

    return EigenDecomp(values=values, vectors=vectors, conjugate_pairs=tuple(pairs))


def dense_eig(M) -> EigenDecomp:
    """Собственные пары произвольной малой вещественной матрицы (через Хессенберга)."""
    M = as_square(M)
    Hm, Q = la.hessenberg(M, calc_q=True)
    Hm = np.triu(Hm, -1)
    decomp = hess_eig(Hm)
    return EigenDecomp(decomp.values, Q @ decomp.vectors, decomp.conjugate_pairs)


def _pade13(A: np.ndarray):
    b = PADE13
    ident = np.eye(A.shape[0], dtype=A.dtype)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    return U, V


def expm(M) -> np.ndarray:
    """Экспонента матрицы: масштабирование и возведение в квадрат, Паде степени 13."""
    M = as_square(M)
    if M.shape[0] == 0:
        return M.copy()
    A = M.astype(np.result_type(M.dtype, float))
    norm = one_norm(A)
    if norm > EXPM_MAX_NORM:
        raise Overflow(f"||M||_1 = {norm:.3e} exceeds {EXPM_MAX_NORM:.0e}")

    squarings = 0
    if norm > THETA13:
        squarings = int(math.ceil(math.log2(norm / THETA13)))
        A = A / 2.0 ** squarings

    U, V = _pade13(A)
    E = la.solve(V - U, V + U, check_finite=False)
    for _ in range(squarings):
        E = E @ E
    return E


def phi_col(M, b, s: int) -> List[np.ndarray]:
    """
    u_l = phi_l(M) b для l = 0..s одной экспонентой расширенной матрицы

        [[M, b e_1^T],
         [0, J_s    ]],   J_s -- нильпотентный сдвиг.
    """
    M = as_square(M)
    b = np.asarray(b)
    k = M.shape[0]
    if b.shape != (k,):
        raise DimensionMismatch(f"vector of length {b.shape} does not match {k}x{k} matrix")
    if s < 0:
        raise ValueError("s must be non-negative")

    dtype = np.result_type(M.dtype, b.dtype, float)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return [np.zeros(k, dtype=dtype) for _ in range(s + 1)]
    if s == 0:
        return [expm(M) @ b]

    aug = np.zeros((k + s, k + s), dtype=dtype)
    aug[:k, :k] = M
    aug[:k, k] = b / nb
    for i in range(s - 1):
        aug[k + i, k + i + 1] = 1.0

    E = expm(aug)
    out = [E[:k, :k] @ b]
    out.extend(nb * E[:k, k + l - 1] for l in range(1, s + 1))
    return out


def phi_taylor_oracle(M, b, ell: int) -> np.ndarray:
    """sum_m M^m b / (m+l)!  -- независимый эталон при ||M||_1 <= 4."""
    M = as_square(M)
    b = np.asarray(b)
    if one_norm(M) > 4.0 + 1e-12:
        raise ValueError("Taylor oracle requires ||M||_1 <= 4")

    term = b / math.factorial(ell)
    acc = term.astype(np.result_type(M.dtype, b.dtype, float))
    for m in range(1, 500):
        term = (M @ term) / (m + ell)
        acc = acc + term
        tn = np.linalg.norm(term)
        if tn == 0.0 or tn < 1e-18 * np.linalg.norm(acc):
            break
    return acc


def phi_scalar(z, ell: int) -> np.ndarray:
    """Скалярная phi_l, векторизованная по z."""
    z = np.asarray(z, dtype=np.result_type(np.asarray(z).dtype, float))
    out = np.empty_like(z)

    small = np.abs(z) < 2.0
    if np.any(small):
        zs = z[small]
        term = np.full_like(zs, 1.0 / math.factorial(ell))
        acc = term.copy()
        for m in range(1, 60):
            term = term * zs / (m + ell)
            acc = acc + term
        out[small] = acc

    big = ~small
    if np.any(big):
        zb = z[big]
        phi = np.exp(zb)
        for j in range(1, ell + 1):
            phi = (phi - 1.0 / math.factorial(j - 1)) / zb
        out[big] = phi
    return out


def phi_all_scalar(z, s: int) -> Dict[int, np.ndarray]:
    return {l: phi_scalar(z, l) for l in range(s + 1)}
