"""
Приближения phi_l(-tA)v в подпространстве Крылова.

Одноцикловые методы: Арнольди, гармонический Арнольди, shift-and-invert.
Рестартованные: TRA (векторы Ритца) и TRHA (гармонические векторы Ритца);
все l из запроса считаются одновременно в одном подпространстве.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from phisolver.arnoldi import (
    ArnoldiDecomp,
    arnoldi_extend,
    compress_restart,
    decomposition_from_restart,
    residual_direction,
    select_ritz_vectors,
    si_arnoldi,
    start_decomposition,
)
from phisolver.densela import lu_solve, phi_col
from phisolver.errors import BasisMismatch, ConfigError, MaxCyclesExceeded, SingularMatrix, SingularProjected, SingularShift
from phisolver.odecorr import CorrectionBlock, CorrectionSystem, solve_correction, xi_matrix
from phisolver.sparsemat import MatvecCounter, Operator, ShiftedSolver, matvec

logger = logging.getLogger(__name__)

SINGLE_CYCLE_METHODS = ("arnoldi", "harmonic", "si")
RESTARTED_METHODS = ("tra", "trha")
GAMMA_RETRIES = 3


@dataclass
class PhiRequest:
    A: Operator
    v: np.ndarray
    t: float
    ells: Sequence[int] = (0,)
    tol: float = 1e-8
    k: int = 30
    q: int = 5
    gamma: float | None = None
    max_cycles: int = 60

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        if self.v.shape != (self.A.n,):
            raise ConfigError(f"vector of shape {self.v.shape} does not match operator of size {self.A.n}")
        if not self.t > 0:
            raise ConfigError("t must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        self.ells = tuple(sorted(set(int(l) for l in self.ells)))
        if not self.ells or self.ells[0] < 0:
            raise ConfigError("ells must be a non-empty set of non-negative integers")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.q < 0:
            raise ConfigError("q must be non-negative")
        if self.gamma is None:
            self.gamma = 0.01 * self.t
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.max_cycles < 1:
            raise ConfigError("max_cycles must be at least 1")
        if self.k > self.A.n:
            logger.info("Subspace dimension k=%d reduced to n=%d", self.k, self.A.n)
            self.k = self.A.n

    @property
    def s(self) -> int:
        return max(self.ells)


@dataclass
class PhiApprox:
    ell: int
    y: np.ndarray
    residual_scalar: float
    residual_norm: float


@dataclass
class CycleState:
    cycle: int
    decomp: ArnoldiDecomp
    projected: np.ndarray
    approximations: Dict[int, np.ndarray]
    n_vec: np.ndarray
    residual_scalars: Dict[int, float]
    # координаты невязки в базисе V_{k+1} этого цикла
    residual_coords: Dict[int, np.ndarray] = field(default_factory=dict)
    blocks: List[CorrectionBlock] = field(default_factory=list)


@dataclass
class MethodReport:
    method: str
    ells: Tuple[int, ...]
    k: int
    q: int
    gamma: float
    residual_history: List[Dict[int, float]] = field(default_factory=list)
    matvecs: int = 0
    solves: int = 0
    cycles: int = 0
    converged: Dict[int, bool] = field(default_factory=dict)
    wall_time: float = 0.0
    q_history: List[int] = field(default_factory=list)
    stack_dims: List[int] = field(default_factory=list)
    breakdown: bool = False
    gamma_retries: int = 0
    bounds: Dict[int, dict] = field(default_factory=dict)
    ode_errors: Dict[int, float] = field(default_factory=dict)

    @property
    def final_residuals(self) -> Dict[int, float]:
        return self.residual_history[-1] if self.residual_history else {}

    def max_residual(self) -> float:
        res = self.final_residuals
        return max(res.values()) if res else math.inf

    @property
    def all_converged(self) -> bool:
        return bool(self.converged) and all(self.converged.values())


def _e1(k: int, beta: float) -> np.ndarray:
    e = np.zeros(k)
    e[0] = beta
    return e


def build_Tk(H: np.ndarray, h_sub: float, gamma: float) -> np.ndarray:
    """T = H + gamma*h^2 (I + gamma*H)^{-H} e_k e_k^T; меняется только последний столбец."""
    T = np.array(H, dtype=float, copy=True)
    if h_sub == 0.0 or gamma == 0.0:
        return T
    k = H.shape[0]
    e_k = np.zeros(k)
    e_k[-1] = 1.0
    try:
        g = lu_solve((np.eye(k) + gamma * H).conj().T, e_k)
    except SingularMatrix as e:
        raise SingularShift(f"I + gamma*H singular for gamma={gamma:.3e}") from e
    T[:, -1] += gamma * h_sub * h_sub * g
    return T


def _projected_phi(D: ArnoldiDecomp, M: np.ndarray, t: float, ells: Sequence[int]) -> Dict[int, np.ndarray]:
    us = phi_col(-t * M, _e1(D.k, D.beta), max(ells))
    return {l: us[l] for l in ells}


def arnoldi_phi_approx(D: ArnoldiDecomp, t: float, ells: Sequence[int]) -> Dict[int, PhiApprox]:
    """y_l = V_k phi_l(-tH) beta e_1, ||r_l|| = |h * e_k^T phi_l(-tH) beta e_1|."""
    h = D.h_sub
    out = {}
    for l, u in _projected_phi(D, D.H, t, ells).items():
        rho = float(u[-1])
        out[l] = PhiApprox(l, D.Vk @ u, rho, abs(h * rho))
    return out


def harmonic_phi_approx(D: ArnoldiDecomp, T: np.ndarray, t: float, ells: Sequence[int],
                        gamma: float) -> Tuple[Dict[int, PhiApprox], np.ndarray]:
    """yhat_l = V_k phi_l(-tT) beta e_1; невязка V_{k+1} w (e_k^T phi_l(-tT) beta e_1)."""
    w = residual_direction(D.Hbar, gamma)
    wn = float(np.linalg.norm(w))
    out = {}
    for l, u in _projected_phi(D, T, t, ells).items():
        rho = float(u[-1])
        out[l] = PhiApprox(l, D.Vk @ u, rho, wn * abs(rho))
    return out, w


def si_phi_approx(Dsi: ArnoldiDecomp, t: float, ells: Sequence[int], gamma: float, A: Operator,
                  counter: MatvecCounter | None = None) -> Dict[int, PhiApprox]:
    """
    ytilde_l = V_k phi_l(-tB) beta e_1, B = (Htilde^{-1} - I)/gamma.
    Норма невязки требует одного умножения на A: ||(I + gamma*A) v_{k+1}||.
    """
    k = Dsi.k
    try:
        H_inv = lu_solve(Dsi.H, np.eye(k))
    except SingularMatrix as e:
        raise SingularProjected("projected shift-and-invert matrix is singular") from e
    B = (H_inv - np.eye(k)) / gamma

    h = Dsi.h_sub
    if h == 0.0:
        factor = 0.0
    else:
        v_next = Dsi.v_next
        factor = float(np.linalg.norm(v_next + gamma * matvec(A, v_next, counter)))

    out = {}
    for l, u in _projected_phi(Dsi, B, t, ells).items():
        rho = float(H_inv[-1] @ u)
        out[l] = PhiApprox(l, Dsi.Vk @ u, rho, abs(h / gamma * rho) * factor)
    return out


def c_vector(n_prev: np.ndarray, Wq1: np.ndarray, k: int,
             V_new: np.ndarray | None = None, V_prev: np.ndarray | None = None) -> np.ndarray:
    """Координаты прежнего направления невязки в новом базисе, дополненные нулями до k+1."""
    lead = Wq1.T @ n_prev
    c_hat = np.zeros(k + 1)
    c_hat[:lead.size] = lead
    if V_new is not None and V_prev is not None:
        diff = np.linalg.norm(V_new[:, :c_hat.size] @ c_hat - V_prev @ n_prev)
        if diff > 1e-10 * max(float(np.linalg.norm(n_prev)), 1e-300):
            raise BasisMismatch(f"previous residual not reproduced by new basis (error {diff:.3e})")
    return c_hat


class PhiKrylovSolver:
    def __init__(self, req: PhiRequest):
        self.req = req
        self.counter = MatvecCounter()
        self.states: List[CycleState] = []

    def _report(self, method: str, gamma: float) -> MethodReport:
        return MethodReport(method=method, ells=tuple(self.req.ells), k=self.req.k, q=self.req.q, gamma=gamma)

    def _finish(self, report: MethodReport, started: float) -> None:
        report.matvecs = self.counter.matvecs
        report.solves = self.counter.solves
        report.wall_time = time.perf_counter() - started
        res = report.final_residuals
        report.converged = {l: res[l] <= self.req.tol for l in self.req.ells}

    def _with_gamma_retry(self, run, method: str):
        gamma = self.req.gamma
        for attempt in range(GAMMA_RETRIES + 1):
            try:
                report, solutions = run(gamma)
                report.gamma_retries = attempt
                return report, solutions
            except SingularShift:
                if attempt == GAMMA_RETRIES:
                    raise
                logger.warning("%s: singular shift at gamma=%.6g, retrying with %.6g", method, gamma, 1.01 * gamma)
                gamma *= 1.01
                self.counter = MatvecCounter()
                self.states = []

    def single_cycle(self, method: str) -> Tuple[MethodReport, Dict[int, np.ndarray]]:
        method = method.lower()
        if method == "shift-invert":
            method = "si"
        if method not in SINGLE_CYCLE_METHODS:
            raise ConfigError(f"unknown single-cycle method '{method}'")
        if method == "arnoldi":
            return self._single_cycle(method, self.req.gamma)
        return self._with_gamma_retry(lambda g: self._single_cycle(method, g), method)

    def _single_cycle(self, method: str, gamma: float):
        req = self.req
        started = time.perf_counter()
        report = self._report(method, gamma)
        logger.info("%s: n=%d, k=%d, t=%g, ells=%s", method, req.A.n, req.k, req.t, list(req.ells))

        if method == "si":
            S = ShiftedSolver(req.A, gamma)
            D = si_arnoldi(S, req.v, req.k, self.counter)
            approx = si_phi_approx(D, req.t, req.ells, gamma, req.A, self.counter)
            projected = D.H
            n_vec = np.zeros(D.k + 1)
            n_vec[-1] = 1.0
        else:
            D = arnoldi_extend(req.A, start_decomposition(req.v), req.k, self.counter)
            if method == "arnoldi":
                approx = arnoldi_phi_approx(D, req.t, req.ells)
                projected = D.H
                n_vec = residual_direction(D.Hbar, 0.0)
            else:
                projected = build_Tk(D.H, D.h_sub, gamma)
                approx, n_vec = harmonic_phi_approx(D, projected, req.t, req.ells, gamma)

        self.states.append(CycleState(
            cycle=1, decomp=D, projected=projected,
            approximations={l: a.y for l, a in approx.items()}, n_vec=n_vec,
            residual_scalars={l: a.residual_scalar for l, a in approx.items()},
            residual_coords={l: n_vec * a.residual_scalar for l, a in approx.items()},
        ))
        report.residual_history.append({l: a.residual_norm for l, a in approx.items()})
        report.cycles = 1
        report.breakdown = D.breakdown
        report.q_history.append(0)
        self._finish(report, started)
        logger.info("%s: done, max residual %.3e, %d matvecs, %d solves",
                    method, report.max_residual(), report.matvecs, report.solves)
        return report, {l: a.y for l, a in approx.items()}

    def restarted(self, method: str) -> Tuple[MethodReport, Dict[int, np.ndarray]]:
        method = method.lower()
        if method not in RESTARTED_METHODS:
            raise ConfigError(f"unknown restarted method '{method}'")
        req = self.req
        if req.k < req.A.n and not 0 < req.q + 1 < req.k:
            raise ConfigError(f"restart needs 0 < q+1 < k (q={req.q}, k={req.k})")
        if method == "tra":
            return self._restarted(method, req.gamma, harmonic=False)
        return self._with_gamma_retry(lambda g: self._restarted(method, g, harmonic=True), method)

    def _restarted(self, method: str, gamma: float, harmonic: bool):
        req = self.req
        started = time.perf_counter()
        report = self._report(method, gamma)
        # TRA: gamma -> 0 в формулах гармонического метода
        g = gamma if harmonic else 0.0
        logger.info("%s: n=%d, k=%d, q=%d, t=%g, ells=%s, gamma=%g",
                    method, req.A.n, req.k, req.q, req.t, list(req.ells), g)

        # Цикл 1
        D = arnoldi_extend(req.A, start_decomposition(req.v), req.k, self.counter)
        T1 = build_Tk(D.H, D.h_sub, g)
        n_vec = residual_direction(D.Hbar, g)
        us = _projected_phi(D, T1, req.t, req.ells)
        solutions = {l: D.Vk @ u for l, u in us.items()}
        rhos = {l: float(u[-1]) for l, u in us.items()}
        residuals = {l: float(np.linalg.norm(n_vec)) * abs(rho) for l, rho in rhos.items()}

        self.states.append(CycleState(
            cycle=1, decomp=D, projected=T1, approximations=dict(solutions), n_vec=n_vec,
            residual_scalars=rhos, residual_coords={l: n_vec * r for l, r in rhos.items()},
        ))
        report.residual_history.append(residuals)
        report.q_history.append(0)
        report.cycles = 1
        logger.info("%s cycle 1: max residual %.3e", method, max(residuals.values()))

        blocks: List[CorrectionBlock] = []
        projected = T1
        while not (D.breakdown or all(r <= req.tol for r in residuals.values())):
            if report.cycles >= req.max_cycles:
                report.breakdown = D.breakdown
                self._finish(report, started)
                logger.warning("%s: max cycles (%d) reached, max residual %.3e",
                               method, req.max_cycles, report.max_residual())
                raise MaxCyclesExceeded(report, solutions)

            ritz = select_ritz_vectors(projected, req.q)
            basis = compress_restart(D, ritz, n_vec)
            D_prev, n_prev = D, n_vec
            D = arnoldi_extend(req.A, decomposition_from_restart(basis, D_prev), req.k, self.counter)
            c_hat = c_vector(n_prev, basis.Wq1, D.k, D.V, D_prev.V)

            if D.breakdown:
                n_vec = np.zeros(D.k + 1)
                n_vec[-1] = 1.0
            else:
                n_vec = residual_direction(D.Hbar, g)
            blocks.append(CorrectionBlock(Xi=xi_matrix(D.Hbar, g), Hbar=D.Hbar, c_hat=c_hat, n_vec=n_vec))

            residuals, rhos, coords = {}, {}, {}
            stack_dim = 0
            for l in req.ells:
                sol = solve_correction(CorrectionSystem(T1=T1, beta=D.beta, blocks=blocks, ell=l, t_end=req.t))
                solutions[l] = solutions[l] + D.Vk @ sol.z[-1]
                residuals[l] = float(np.linalg.norm(sol.bracket))
                rhos[l] = sol.rho[-1]
                coords[l] = sol.bracket
                report.ode_errors[l] = max(report.ode_errors.get(l, 0.0), sol.error_estimate)
                stack_dim = sol.stack_dim

            projected = build_Tk(D.H, D.h_sub, g)
            report.cycles += 1
            report.residual_history.append(residuals)
            report.q_history.append(basis.q)
            report.stack_dims.append(stack_dim)
            self.states.append(CycleState(
                cycle=report.cycles, decomp=D, projected=projected, approximations=dict(solutions),
                n_vec=n_vec, residual_scalars=rhos, residual_coords=coords, blocks=list(blocks),
            ))
            logger.info("%s cycle %d: q=%d, stack=%d, max residual %.3e",
                        method, report.cycles, basis.q, stack_dim, max(residuals.values()))

        report.breakdown = D.breakdown
        self._finish(report, started)
        logger.info("%s: converged in %d cycles, %d matvecs", method, report.cycles, report.matvecs)
        return report, solutions


def run_single_cycle(req: PhiRequest, method: str) -> Tuple[MethodReport, Dict[int, np.ndarray]]:
    return PhiKrylovSolver(req).single_cycle(method)


def run_restarted(req: PhiRequest, method: str) -> Tuple[MethodReport, Dict[int, np.ndarray]]:
    return PhiKrylovSolver(req).restarted(method)
