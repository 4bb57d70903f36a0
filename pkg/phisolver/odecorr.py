"""
Поправочные ОДУ толстого рестарта.

Все циклы интегрируются одной стековой системой: блок 1 несёт
u(tau) = phi_l(-tau*T) beta*e_1, блок j >= 2 -- поправку z_j с вынуждающим
скаляром rho_{j-1}(tau) из состояния блока j-1:

    z_j' = -(Xi_j Hbar_j + (l/tau) I) z_j + Xi_j c_j rho_{j-1}(tau)
    rho_j = n_j^H P_j (c_j rho_{j-1} - Hbar_j z_j) / ||n_j||^2,  P_j = I - Ibar Xi_j

Слагаемые l/tau в rho_j сокращаются, поэтому система линейна:
x' = L0 x - (l/tau) x + g/tau.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.integrate import solve_ivp

from phisolver.densela import lu_solve, one_norm, phi_col, phi_taylor_oracle
from phisolver.errors import SingularMatrix, SingularShift, SingularStart, StiffFailure

logger = logging.getLogger(__name__)

ODE_TOL = 1e-9
# контрольное интегрирование с допуском tol * ERROR_REFINE
ERROR_REFINE = 10.0
START_FRACTION = 1e-8


def xi_matrix(Hbar: np.ndarray, gamma: float) -> np.ndarray:
    """Xi = (I + gamma*H)^{-H} (Ibar + gamma*Hbar)^H; при gamma = 0 это Ibar^T."""
    k = Hbar.shape[1]
    Ibar = np.vstack([np.eye(k), np.zeros((1, k))])
    if gamma == 0.0:
        return Ibar.T.copy()
    try:
        return lu_solve((np.eye(k) + gamma * Hbar[:k, :k]).conj().T, (Ibar + gamma * Hbar).conj().T)
    except SingularMatrix as e:
        raise SingularShift(f"I + gamma*H singular for gamma={gamma:.3e}") from e


@dataclass
class CorrectionBlock:
    Xi: np.ndarray
    Hbar: np.ndarray
    c_hat: np.ndarray
    n_vec: np.ndarray

    @property
    def k(self) -> int:
        return self.Hbar.shape[1]

    @property
    def forcing(self) -> np.ndarray:
        return self.Xi @ self.c_hat

    @property
    def projector(self) -> np.ndarray:
        k = self.k
        Ibar = np.vstack([np.eye(k), np.zeros((1, k))])
        return np.eye(k + 1) - Ibar @ self.Xi

    @property
    def rho_functional(self) -> np.ndarray:
        return self.projector.T @ self.n_vec / float(self.n_vec @ self.n_vec)


@dataclass
class CorrectionSystem:
    T1: np.ndarray
    beta: float
    blocks: List[CorrectionBlock]
    ell: int
    t_end: float
    tol: float = ODE_TOL

    @property
    def dims(self) -> List[int]:
        return [self.T1.shape[0]] + [b.k for b in self.blocks]

    @property
    def size(self) -> int:
        return sum(self.dims)

    def offsets(self) -> List[int]:
        return list(np.cumsum([0] + self.dims))

    def assemble(self):
        """L0 и g (при g/tau) стековой системы; a -- функционал rho последнего блока."""
        D = self.size
        off = self.offsets()
        k1 = self.T1.shape[0]

        L0 = np.zeros((D, D))
        g = np.zeros(D)
        L0[:k1, :k1] = -self.T1
        if self.ell >= 1:
            g[0] = self.beta / math.factorial(self.ell - 1)

        a = np.zeros(D)
        a[k1 - 1] = 1.0
        functionals = [a.copy()]
        for j, block in enumerate(self.blocks, start=1):
            s, e = off[j], off[j + 1]
            L0[s:e, s:e] = -block.Xi @ block.Hbar
            L0[s:e, :] += np.outer(block.forcing, a)
            pi = block.rho_functional
            a_next = (pi @ block.c_hat) * a
            a_next[s:e] -= pi @ block.Hbar
            a = a_next
            functionals.append(a.copy())
        return L0, g, functionals


@dataclass
class CorrectionSolution:
    u: np.ndarray
    z: List[np.ndarray]
    z_prime: List[np.ndarray]
    brackets: List[np.ndarray]
    rho: List[float]
    error_estimate: float
    nfev: int = 0
    stack_dim: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def bracket(self) -> np.ndarray:
        return self.brackets[-1]


def singular_start(sys: CorrectionSystem, t0: float) -> np.ndarray:
    """Состояние при tau = t0 для l >= 1 из главного баланса z' = -(l/tau) z + f(0)."""
    ell = sys.ell
    k1 = sys.T1.shape[0]
    e1 = np.zeros(k1)
    e1[0] = sys.beta

    M = -t0 * sys.T1
    if one_norm(M) <= 4.0:
        u0 = phi_taylor_oracle(M, e1, ell)
    else:
        u0 = phi_col(M, e1, ell)[ell]

    x0 = np.zeros(sys.size)
    x0[:k1] = u0
    off = sys.offsets()
    rho = u0[-1]
    for j, block in enumerate(sys.blocks, start=1):
        s, e = off[j], off[j + 1]
        z0 = t0 * block.forcing * rho / (ell + 1)
        x0[s:e] = z0
        rho = float(block.rho_functional @ (block.c_hat * rho - block.Hbar @ z0))

    if not np.all(np.isfinite(x0)):
        raise SingularStart(f"non-finite start state at t0={t0:.3e} (l={ell})")
    return x0


def _integrate(rhs, jac, t0: float, t_end: float, x0: np.ndarray, tol: float, ell: int):
    sol = solve_ivp(rhs, (t0, t_end), x0, method="Radau", jac=jac, rtol=tol, atol=tol)
    if sol.status != 0:
        raise StiffFailure(f"correction ODE failed (l={ell}, dim={x0.size}): {sol.message}")
    h_last = np.diff(sol.t)[-1] if len(sol.t) > 1 else t_end
    if h_last < 1e-15 * t_end:
        raise StiffFailure(f"step size underflow ({h_last:.3e}) in correction ODE")
    return sol


def solve_correction(sys: CorrectionSystem) -> CorrectionSolution:
    if sys.t_end <= 0:
        raise ValueError("t_end must be positive")
    ell = sys.ell
    L0, g, functionals = sys.assemble()
    D = sys.size
    k1 = sys.T1.shape[0]
    ident = np.eye(D)

    if ell == 0:
        t0 = 0.0
        x0 = np.zeros(D)
        x0[0] = sys.beta

        def rhs(tau, x):
            return L0 @ x

        def jac(tau, x):
            return L0
    else:
        t0 = START_FRACTION * sys.t_end
        x0 = singular_start(sys, t0)

        def rhs(tau, x):
            return L0 @ x - (ell / tau) * x + g / tau

        def jac(tau, x):
            return L0 - (ell / tau) * ident

    sol = _integrate(rhs, jac, t0, sys.t_end, x0, sys.tol, ell)
    coarse = _integrate(rhs, jac, t0, sys.t_end, x0, sys.tol * ERROR_REFINE, ell)

    x = sol.y[:, -1]
    # разность решений с допусками tol * ERROR_REFINE и tol
    err = float(np.linalg.norm(coarse.y[:, -1] - x)) + 64 * np.finfo(float).eps * (1.0 + float(np.linalg.norm(x)))
    dx = rhs(sys.t_end, x)
    off = sys.offsets()

    z, z_prime, brackets, rhos = [], [], [], [float(functionals[0] @ x)]
    for j, block in enumerate(sys.blocks, start=1):
        s, e = off[j], off[j + 1]
        zj, dzj = x[s:e], dx[s:e]
        k = block.k
        c = block.c_hat * rhos[-1]
        # c - (Hbar + (l/t) Ibar) z - [z'; 0]
        b = c - block.Hbar @ zj
        b[:k] -= (ell / sys.t_end) * zj + dzj
        z.append(zj)
        z_prime.append(dzj)
        brackets.append(b)
        rhos.append(float(functionals[j] @ x))

    logger.debug("Correction ODE l=%d dim=%d: %d steps, %d rhs evals, error %.2e",
                 ell, D, len(sol.t) - 1, coarse.nfev + sol.nfev, err)
    return CorrectionSolution(
        u=x[:k1], z=z, z_prime=z_prime, brackets=brackets, rho=rhos,
        error_estimate=err, nfev=coarse.nfev + sol.nfev, stack_dim=D,
    )
