"""
Апостериорные оценки ошибки через невязку.

Оценка имеет вид ||e_l|| <= c_l * I * ||r_l||, где I -- интеграл по прямой
Re z = eps (квадратура) либо его замкнутая мажоранта. Множитель c_l считается
в логарифмах: произведение поддиагонали переполняется уже при k ~ 30.
Предполагается W(A) в секторе {z : |arg(z - a)| <= theta}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import quad

from phisolver.densela import dense_eig, phi_col
from phisolver.errors import AssumptionViolated, ConfigError, DivergentIntegral, NumericalError

logger = logging.getLogger(__name__)

REAL_TOL = 1e-10
QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class SectorAssumption:
    a: float
    theta: float = 0.0
    asserted: bool = True

    def __post_init__(self):
        if self.a < 0:
            raise ConfigError("sector vertex a must be non-negative")
        if not 0.0 <= self.theta <= math.pi / 2:
            raise ConfigError("sector angle must lie in [0, pi/2]")

    def contains(self, z: complex, tol: float = 1e-12) -> bool:
        d = complex(z) - self.a
        if abs(d) <= tol * (1.0 + abs(z)):
            return True
        # точки левее вершины сектору не принадлежат
        if d.real < -tol * (1.0 + abs(z)):
            return False
        return abs(math.atan2(d.imag, max(d.real, 0.0))) <= self.theta + tol


@dataclass(frozen=True)
class SpectrumClass:
    k_real: int
    r: np.ndarray
    R: float
    log_omega: float
    real_mask: np.ndarray


@dataclass
class BoundInputs:
    eps: float
    a: float
    values: np.ndarray
    log_subdiag: float
    ell: int
    t: float
    phi_corner: float
    residual_norm: float = 1.0

    @property
    def k(self) -> int:
        return len(self.values)


def classify_spectrum(values: Sequence[complex], eps: float) -> SpectrumClass:
    values = np.asarray(values, dtype=complex)
    real_mask = np.abs(values.imag) <= REAL_TOL * (1.0 + np.abs(values))
    shifted = eps + values.real
    if np.any(shifted <= 0):
        raise AssumptionViolated(f"eps + Re(mu) <= 0 for eps={eps:g} (min Re(mu) = {values.real.min():.3e})")
    imag = np.where(real_mask, 0.0, values.imag)
    r = np.hypot(shifted, imag)
    log_omega = 0.5 * float(np.sum(np.log(r) + np.log(shifted)))
    return SpectrumClass(
        k_real=int(real_mask.sum()), r=r, R=float(r.max()) if r.size else 0.0,
        log_omega=log_omega, real_mask=real_mask,
    )


def _log_prefactor(inp: BoundInputs, spec: SpectrumClass) -> float:
    """log(c_l * ||r_l||)."""
    if inp.eps <= 0:
        raise ConfigError("eps must be positive")
    if inp.phi_corner == 0.0 or inp.residual_norm <= 0.0:
        return -math.inf
    log_c = (
        inp.t * inp.eps
        - math.log(math.pi)
        - inp.ell * math.log(inp.t * inp.eps)
        - spec.log_omega
        - math.log(inp.eps + inp.a)
        + inp.log_subdiag
        - math.log(abs(inp.phi_corner))
    )
    return log_c + math.log(inp.residual_norm)


def _scaled(log_c: float, value: float) -> float:
    if log_c == -math.inf or value == 0.0:
        return 0.0
    return math.exp(log_c + math.log(value))


def bound_integral(inp: BoundInputs) -> float:
    spec = classify_spectrum(inp.values, inp.eps)
    if inp.k + spec.k_real + 2 * inp.ell < 4:
        raise DivergentIntegral(f"k + k_real + 2l = {inp.k + spec.k_real + 2 * inp.ell} < 4")
    return _scaled(_log_prefactor(inp, spec), integral_constant(inp, spec))


def integral_constant(inp: BoundInputs, spec: SpectrumClass) -> float:
    """int_0^inf (1 + rho^2/eps^2)^{-l/2} / varsigma(rho) d rho."""
    # вещественные собственные значения дают показатель 1/2, сопряжённые пары -- 1/4
    powers = np.where(spec.real_mask, 0.5, 0.25)
    inv_r2 = 1.0 / spec.r ** 2
    inv_eps2 = 1.0 / inp.eps ** 2

    def integrand(rho: float) -> float:
        rho2 = rho * rho
        log_val = -0.5 * inp.ell * math.log1p(rho2 * inv_eps2) - float(powers @ np.log1p(rho2 * inv_r2))
        return math.exp(log_val)

    value, abserr = quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    if not math.isfinite(value) or value <= 0:
        raise DivergentIntegral("quadrature returned a non-positive or non-finite value")
    if abserr > QUAD_RTOL * value:
        logger.warning("Bound quadrature error %.3e above %.0e relative", abserr, QUAD_RTOL)
    return value


def closed_constant(inp: BoundInputs, spec: SpectrumClass) -> float:
    eps, ell, k, R = inp.eps, inp.ell, inp.k, spec.R
    weights = np.where(spec.real_mask, 0.5, 0.25)
    r2 = spec.r ** 2
    S1 = ell / (4 * eps ** 2) + float(weights @ (1.0 / (r2 + eps ** 2)))
    S2 = ell / (2 * (eps ** 2 + R ** 2)) + float(weights @ (1.0 / (r2 + R ** 2)))
    tail = (eps / math.sqrt(eps ** 2 + R ** 2)) ** ell * math.pi * R / 2.0 ** ((k + spec.k_real) / 4 + 1)
    return math.sqrt(math.pi) / (2 * math.sqrt(S1)) + math.exp(-eps ** 2 * S2) * (R - eps) + tail


def bound_closed(inp: BoundInputs) -> float:
    spec = classify_spectrum(inp.values, inp.eps)
    if inp.k + spec.k_real < 4:
        raise DivergentIntegral(f"closed bound needs k + k_real >= 4, got {inp.k + spec.k_real}")
    return _scaled(_log_prefactor(inp, spec), closed_constant(inp, spec))


def default_eps(a: float) -> float:
    return a / 2 if a > 0 else 1.0


def check_sector(A, sector: SectorAssumption, samples: int = 100, rng: np.random.Generator | None = None) -> bool:
    """Необходимое условие W(A) в секторе: отношения Рэлея на случайных векторах."""
    rng = rng or np.random.default_rng(0)
    n = A.n
    for _ in range(samples):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        Ax = A.apply(x.real) + 1j * A.apply(x.imag)
        z = np.vdot(x, Ax) / np.vdot(x, x)
        if not sector.contains(z, tol=1e-10):
            logger.warning("Rayleigh quotient %.6g%+.6gi outside sector (a=%g, theta=%g)",
                           z.real, z.imag, sector.a, sector.theta)
            return False
    return True


def sector_from_spectrum(A, max_n: int = 5000) -> SectorAssumption | None:
    """Сектор theta = 0 с вершиной lambda_min для симметричной положительно определённой A, иначе None."""
    if A.n > max_n or not A.is_symmetric():
        return None
    lam_min = float(la.eigvalsh(A.to_dense(), subset_by_index=[0, 0])[0])
    if lam_min <= 0:
        return None
    return SectorAssumption(lam_min, 0.0, asserted=False)


def harmonic_location_ok(T: np.ndarray, sector: SectorAssumption) -> bool:
    """Собственные значения T_k в секторе; необходимое условие для W(T_k)."""
    values = dense_eig(T).values
    return all(sector.contains(z, tol=1e-10) for z in values)


@dataclass
class BoundReport:
    eps: float
    closed: float | None = None
    integral: float | None = None
    valid: bool = True
    reason: str | None = None
    extra: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "eps": self.eps, "closed": self.closed, "integral": self.integral,
            "valid": self.valid, "reason": self.reason,
        }


def bounds_for(M: np.ndarray, Hbar: np.ndarray, t: float, ell: int, sector: SectorAssumption,
               residual_norm: float, eps: float | None = None) -> BoundReport:
    """Обе оценки для одной функции phi_l; M -- H_k (Арнольди) или T_k (гармонический)."""
    eps = default_eps(sector.a) if eps is None else eps
    k = M.shape[0]
    sub = np.abs(np.diag(Hbar[:k, :k], -1))
    log_subdiag = float(np.sum(np.log(sub))) if sub.size else 0.0
    e1 = np.zeros(k)
    e1[0] = 1.0
    corner = float(phi_col(-t * M, e1, ell)[ell][-1])

    inp = BoundInputs(
        eps=eps, a=sector.a, values=dense_eig(M).values, log_subdiag=log_subdiag,
        ell=ell, t=t, phi_corner=corner, residual_norm=residual_norm,
    )
    out = BoundReport(eps=eps)
    try:
        out.closed = bound_closed(inp)
    except NumericalError as e:
        out.reason = str(e)
    try:
        out.integral = bound_integral(inp)
    except NumericalError as e:
        out.reason = str(e)
    return out


def attach_bounds(report, decomp, projected: np.ndarray, t: float, sector: SectorAssumption,
                  eps: float | None = None, harmonic: bool = False) -> Dict[int, BoundReport]:
    """Считает оценки по итоговым невязкам одноциклового метода и кладёт их в report.bounds."""
    valid = True
    if harmonic:
        valid = harmonic_location_ok(projected, sector)
        if not valid:
            logger.warning("T_k eigenvalues outside the sector: harmonic bounds flagged invalid")

    out = {}
    for ell, res in report.final_residuals.items():
        b = bounds_for(projected, decomp.Hbar, t, ell, sector, res, eps)
        b.valid = valid and b.reason is None
        out[ell] = b
        report.bounds[ell] = b.as_dict()
    return out
