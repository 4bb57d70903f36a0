"""
Процесс Арнольди, вариант shift-and-invert и сжатие базиса при толстом рестарте.

Соотношение A V_k = V_{k+1} Hbar_k поддерживается и после рестарта, когда
ведущий блок Hbar уже не хессенбергов.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from phisolver.densela import dense_eig, lu_solve
from phisolver.errors import BasisMismatch, InputError, RankDeficient, SingularMatrix, SingularShift
from phisolver.sparsemat import MatvecCounter, Operator, ShiftedSolver, matvec

logger = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-12
RANK_TOL = 1e-12


@dataclass
class ArnoldiDecomp:
    V: np.ndarray
    Hbar: np.ndarray
    k: int
    beta: float
    breakdown: bool = False
    breakdown_step: int | None = None
    gamma: float | None = None
    norm_estimate: float = 0.0

    @property
    def H(self) -> np.ndarray:
        return self.Hbar[:self.k, :self.k]

    @property
    def h_sub(self) -> float:
        return float(self.Hbar[self.k, self.k - 1]) if self.k > 0 else 0.0

    @property
    def Vk(self) -> np.ndarray:
        return self.V[:, :self.k]

    @property
    def v_next(self) -> np.ndarray:
        return self.V[:, self.k]


@dataclass
class RestartBasis:
    Wq1: np.ndarray
    Vq1: np.ndarray
    Hbar_q: np.ndarray
    q: int
    n_vec: np.ndarray


def start_decomposition(v: np.ndarray) -> ArnoldiDecomp:
    v = np.asarray(v, dtype=float)
    beta = float(np.linalg.norm(v))
    if beta == 0.0:
        raise InputError("starting vector is zero")
    return ArnoldiDecomp(V=(v / beta)[:, None], Hbar=np.zeros((1, 0)), k=0, beta=beta)


def _extend(apply: Callable[[np.ndarray], np.ndarray], D: ArnoldiDecomp, target_k: int) -> ArnoldiDecomp:
    n = D.V.shape[0]
    if target_k > n:
        raise InputError(f"target dimension {target_k} exceeds n={n}")
    if D.breakdown or D.k >= target_k:
        return D

    V = np.zeros((n, target_k + 1))
    V[:, :D.k + 1] = D.V
    Hbar = np.zeros((target_k + 1, target_k))
    Hbar[:D.k + 1, :D.k] = D.Hbar
    norm_est = D.norm_estimate

    for j in range(D.k, target_k):
        w = apply(V[:, j])
        norm_est = max(norm_est, float(np.linalg.norm(w)))

        # MGS и один полный проход реортогонализации
        for _ in range(2):
            for i in range(j + 1):
                c = V[:, i] @ w
                Hbar[i, j] += c
                w -= c * V[:, i]

        h = float(np.linalg.norm(w))
        if h <= BREAKDOWN_TOL * norm_est:
            logger.debug("Arnoldi breakdown at step %d (h=%.3e)", j + 1, h)
            return ArnoldiDecomp(
                V=V[:, :j + 2], Hbar=Hbar[:j + 2, :j + 1], k=j + 1, beta=D.beta,
                breakdown=True, breakdown_step=j + 1, gamma=D.gamma, norm_estimate=norm_est,
            )
        Hbar[j + 1, j] = h
        V[:, j + 1] = w / h

    return ArnoldiDecomp(V=V, Hbar=Hbar, k=target_k, beta=D.beta, gamma=D.gamma, norm_estimate=norm_est)


def arnoldi_extend(A: Operator, D: ArnoldiDecomp, target_k: int,
                   counter: MatvecCounter | None = None) -> ArnoldiDecomp:
    return _extend(lambda x: matvec(A, x, counter), D, target_k)


def si_arnoldi(S: ShiftedSolver, v: np.ndarray, k: int,
               counter: MatvecCounter | None = None) -> ArnoldiDecomp:
    """Арнольди для (I + gamma*A)^{-1}: решения систем вместо умножений."""
    D = start_decomposition(v)
    D.gamma = S.gamma
    return _extend(lambda x: S.solve(x, counter), D, k)


def residual_direction(Hbar: np.ndarray, gamma: float) -> np.ndarray:
    """
    w = [gamma*h^2 (I + gamma*H)^{-H} e_k; -h], порождает ядро (Ibar + gamma*Hbar)^H.
    """
    k = Hbar.shape[1]
    H = Hbar[:k, :k]
    h = Hbar[k, k - 1]

    if gamma == 0.0:
        w = np.zeros(k + 1)
        w[k] = -h
        return w
    if np.any(Hbar[k, :k - 1] != 0.0):
        return null_direction(Hbar, gamma)

    e_k = np.zeros(k)
    e_k[-1] = 1.0
    try:
        g = lu_solve((np.eye(k) + gamma * H).conj().T, e_k)
    except SingularMatrix as e:
        raise SingularShift(f"I + gamma*H singular for gamma={gamma:.3e}") from e
    return np.concatenate([gamma * h * h * g, [-h]])


def null_direction(Hbar: np.ndarray, gamma: float) -> np.ndarray:
    """Ядро (Ibar + gamma*Hbar)^H через полное QR; нормировка как у замкнутой формулы."""
    k = Hbar.shape[1]
    M = np.vstack([np.eye(k), np.zeros((1, k))]) + gamma * Hbar
    Q, R = np.linalg.qr(M, mode="complete")
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= 1e-14 * max(np.linalg.norm(M), 1e-300):
        raise SingularShift(f"Ibar + gamma*Hbar rank deficient for gamma={gamma:.3e}")
    n_vec = Q[:, -1].copy()
    h = Hbar[k, k - 1]
    if abs(n_vec[-1]) > 1e-14 and h != 0.0:
        n_vec *= -h / n_vec[-1]
    else:
        n_vec *= np.linalg.norm(Hbar[k]) / np.linalg.norm(n_vec)
    return n_vec


def orthonormalize_columns(X: np.ndarray, start: int = 0, tol: float = RANK_TOL) -> Tuple[np.ndarray, List[int]]:
    """
    Двухпроходный MGS. Первые `start` столбцов считаются уже ортонормированными.
    Столбцы с нормой после проекции <= tol отбрасываются.
    """
    X = np.array(X, dtype=float)
    kept = list(range(start))
    basis = [X[:, i] for i in range(start)]
    for j in range(start, X.shape[1]):
        x = X[:, j]
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            continue
        x = x / nrm
        for _ in range(2):
            for b in basis:
                x = x - (b @ x) * b
        nrm = np.linalg.norm(x)
        if nrm <= tol:
            continue
        basis.append(x / nrm)
        kept.append(j)
    Q = np.column_stack(basis) if basis else np.zeros((X.shape[0], 0))
    return Q, kept


def select_ritz_vectors(M: np.ndarray, q: int) -> np.ndarray:
    """
    Вещественный k x q' базис собственных векторов M для q наименьших по модулю
    собственных значений; комплексная пара даёт Re и Im, q' может стать q+1 (не больше k-2).
    """
    k = M.shape[0]
    if q <= 0:
        return np.zeros((k, 0))
    eig = dense_eig(M)
    order = sorted(range(k), key=lambda j: (abs(eig.values[j]), abs(eig.values[j].imag)))
    cap = max(k - 2, 0)

    cols = []
    seen = set()
    for j in order:
        if len(cols) >= q:
            break
        if j in seen:
            continue
        p = eig.partner(j)
        if p is None:
            cols.append(eig.vectors[:, j].real)
            seen.add(j)
            continue
        seen.update((j, p))
        if len(cols) + 2 <= max(q, min(q + 1, cap)):
            cols.extend([eig.vectors[:, j].real, eig.vectors[:, j].imag])
        else:
            logger.debug("Skipping conjugate pair %d/%d: q cap %d reached", j, p, cap)

    if len(cols) != q:
        logger.info("Retained eigenvector count adjusted %d -> %d (conjugate pairs)", q, len(cols))
    return np.column_stack(cols) if cols else np.zeros((k, 0))


def compress_restart(D: ArnoldiDecomp, ritz_vectors: np.ndarray, n_vec: np.ndarray) -> RestartBasis:
    k = D.k
    ritz_vectors = np.asarray(ritz_vectors, dtype=float)
    if ritz_vectors.shape[0] != k:
        raise InputError(f"ritz vectors have {ritz_vectors.shape[0]} rows, expected {k}")
    if ritz_vectors.shape[1] + 1 > k:
        raise InputError("restart needs q+1 <= k")

    Wq, kept = orthonormalize_columns(ritz_vectors)
    dropped = ritz_vectors.shape[1] - len(kept)
    if dropped:
        msg = f"{dropped} retained vector(s) linearly dependent, q reduced to {len(kept)}"
        logger.warning(msg)
        warnings.warn(msg, RankDeficient, stacklevel=2)
    q = Wq.shape[1]

    W_hat = np.vstack([Wq, np.zeros((1, q))])
    n_hat = n_vec / np.linalg.norm(n_vec)
    Wq1, kept = orthonormalize_columns(np.column_stack([W_hat, n_hat]), start=q)
    if len(kept) != q + 1:
        raise BasisMismatch("residual direction lies in the span of retained vectors")

    Hbar_q = Wq1.T @ D.Hbar @ Wq
    Vq1 = D.V @ Wq1
    logger.debug("Restart basis compressed: k=%d -> q=%d", k, q)
    return RestartBasis(Wq1=Wq1, Vq1=Vq1, Hbar_q=Hbar_q, q=q, n_vec=np.asarray(n_vec, dtype=float))


def decomposition_from_restart(basis: RestartBasis, D: ArnoldiDecomp) -> ArnoldiDecomp:
    """Начальное разложение следующего цикла: V_{q+1}, Hbar_q."""
    return ArnoldiDecomp(
        V=basis.Vq1, Hbar=basis.Hbar_q, k=basis.q, beta=D.beta,
        gamma=D.gamma, norm_estimate=D.norm_estimate,
    )
