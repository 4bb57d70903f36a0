"""
Экспериментальный стенд: сборка задачи, запуск метода, эталон, отчёты.
"""
import csv
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np
import scipy.linalg as la

from phisolver.config import SCHEMA_VERSION, ComparisonTable, EllResult, RunConfig, RunRecord
from phisolver.densela import one_norm, phi_col, phi_scalar, phi_taylor_oracle
from phisolver.errbound import SectorAssumption, attach_bounds, sector_from_spectrum
from phisolver.errors import ConfigError, MaxCyclesExceeded
from phisolver.phikrylov import PhiKrylovSolver, PhiRequest, RESTARTED_METHODS
from phisolver.sparsemat import (
    CsrOperator,
    Operator,
    gen_advdiff2d,
    gen_laplacian2d,
    gen_lesp,
    gen_ones,
    gen_rhs_poly,
    load_matrix_market,
)

logger = logging.getLogger(__name__)

DENSE_ORACLE_MAX_N = 5000
DEFAULT_GRID_N = 50
DEFAULT_LESP_N = 100

CSV_COLUMNS = [
    "method", "problem", "n", "t", "ell", "residual", "error", "cycles", "mv",
    "wall_ms", "bound_closed", "bound_integral", "solution_norm", "schema_version",
]


@dataclass
class RunOutcome:
    record: RunRecord
    solutions: Dict[int, np.ndarray]


def build_problem(cfg: RunConfig) -> Tuple[Operator, np.ndarray]:
    if cfg.problem == "laplacian2d":
        N = cfg.N or DEFAULT_GRID_N
        A, v = gen_laplacian2d(N, cfg.scale), gen_rhs_poly(N)
    elif cfg.problem == "advdiff2d":
        A, v = gen_advdiff2d(cfg.N or DEFAULT_GRID_N)
    elif cfg.problem == "lesp":
        A = gen_lesp(cfg.n or DEFAULT_LESP_N)
        v = gen_ones(A.n)
    else:
        A = load_matrix_market(cfg.problem[len("mtx:"):])
        v = gen_ones(A.n)

    if cfg.vector == "ones":
        v = gen_ones(A.n)
    elif cfg.vector == "random":
        v = np.random.default_rng(cfg.seed).standard_normal(A.n)
    return A, v


def problem_hash(A: CsrOperator, v: np.ndarray, t: float) -> str:
    h = hashlib.sha256()
    for arr in (A.indptr, A.indices, A.data, np.asarray(v, dtype=float)):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(float(t)).encode())
    return h.hexdigest()[:16]


def dense_oracle(A: Operator, v: np.ndarray, t: float, ells: Iterable[int]) -> Dict[int, np.ndarray]:
    """phi_l(-tA)v по плотной матрице: через eigh для симметричной A, иначе расширенная экспонента."""
    if A.n > DENSE_ORACLE_MAX_N:
        raise ConfigError(f"dense oracle limited to n <= {DENSE_ORACLE_MAX_N}, got {A.n}")
    ells = sorted(set(ells))
    M = A.to_dense()
    if A.is_symmetric(tol=1e-14 * max(A.norm1(), 1.0)):
        lam, Q = la.eigh(M)
        coeffs = Q.T @ v
        return {l: Q @ (phi_scalar(-t * lam, l) * coeffs) for l in ells}
    us = phi_col(-t * M, np.asarray(v, dtype=float), max(ells))
    return {l: us[l] for l in ells}


def taylor_oracle(A: Operator, v: np.ndarray, t: float, ells: Iterable[int]) -> Dict[int, np.ndarray]:
    M = -t * A.to_dense()
    if one_norm(M) > 4.0:
        raise ConfigError("taylor oracle requires ||tA||_1 <= 4")
    return {l: phi_taylor_oracle(M, v, l) for l in ells}


def _sector(cfg: RunConfig, A: Operator) -> SectorAssumption | None:
    if cfg.sector_a is not None:
        return SectorAssumption(cfg.sector_a, cfg.sector_theta)
    return sector_from_spectrum(A, max_n=DENSE_ORACLE_MAX_N)


def solve(cfg: RunConfig) -> RunOutcome:
    A, v = build_problem(cfg)
    req = PhiRequest(
        A=A, v=v, t=cfg.t, ells=cfg.ells, tol=cfg.tol, k=cfg.k, q=cfg.q,
        gamma=cfg.gamma_value, max_cycles=cfg.max_cycles,
    )
    logger.info("Run: problem=%s n=%d method=%s t=%g ells=%s", cfg.problem, A.n, cfg.method, cfg.t, cfg.ells)

    solver = PhiKrylovSolver(req)
    message = None
    started = time.perf_counter()
    try:
        if cfg.method in RESTARTED_METHODS:
            report, solutions = solver.restarted(cfg.method)
        else:
            report, solutions = solver.single_cycle(cfg.method)
    except MaxCyclesExceeded as e:
        report, solutions = e.report, e.solutions
        message = str(e)
    wall_ms = 1000.0 * (time.perf_counter() - started)

    if cfg.bounds and cfg.method in ("arnoldi", "harmonic"):
        sector = _sector(cfg, A)
        if sector is None:
            logger.warning("Bounds requested but no sector known for %s; pass sector_a", cfg.problem)
        else:
            state = solver.states[-1]
            attach_bounds(report, state.decomp, state.projected, cfg.t, sector,
                          harmonic=cfg.method == "harmonic")

    errors: Dict[int, float] = {}
    if cfg.oracle != "none":
        try:
            exact = dense_oracle(A, v, cfg.t, cfg.ells) if cfg.oracle == "dense" else taylor_oracle(A, v, cfg.t, cfg.ells)
        except ConfigError as e:
            logger.warning("Oracle skipped: %s", e)
            exact = {}
        for l, y in exact.items():
            ny = float(np.linalg.norm(y))
            errors[l] = float(np.linalg.norm(y - solutions[l])) / ny if ny > 0 else float(np.linalg.norm(solutions[l]))

    if cfg.scaled:
        solutions = {l: cfg.t ** l * y for l, y in solutions.items()}

    results = []
    for l in cfg.ells:
        b = report.bounds.get(l, {})
        results.append(EllResult(
            ell=l,
            residual=report.final_residuals[l],
            error=errors.get(l),
            converged=report.converged.get(l, False),
            bound_closed=b.get("closed"),
            bound_integral=b.get("integral"),
            bound_valid=b.get("valid"),
            solution_norm=float(np.linalg.norm(solutions[l])),
            ode_error=report.ode_errors.get(l),
        ))

    record = RunRecord(
        config=cfg,
        problem_hash=problem_hash(A, v, cfg.t) if isinstance(A, CsrOperator) else "",
        n=A.n,
        gamma=report.gamma,
        results=results,
        cycles=report.cycles,
        matvecs=report.matvecs,
        solves=report.solves,
        wall_ms=wall_ms,
        converged=report.all_converged,
        q_history=report.q_history,
        residual_history=report.residual_history,
        message=message,
    )

    logger.info("Run finished: cycles=%d matvecs=%d converged=%s wall=%.1f ms",
                record.cycles, record.matvecs, record.converged, wall_ms)
    return RunOutcome(record, solutions)


def run(cfg: RunConfig, store=None) -> RunRecord:
    outcome = solve(cfg)
    record = outcome.record
    if cfg.output:
        write_report([record], cfg.output)
    if cfg.solutions:
        write_solutions(outcome.solutions, cfg.solutions, cfg)
    if store is not None:
        store.save(record)
    return record


def _same_problem(a: RunConfig, b: RunConfig) -> bool:
    keys = ("problem", "N", "n", "scale", "vector", "seed")
    return all(getattr(a, key) == getattr(b, key) for key in keys)


def savings_lines(records: List[RunRecord]) -> List[str]:
    """Mv одновременного расчёта против суммы последовательных по тем же l."""
    lines = []
    for rec in records:
        ells = rec.config.ells
        if len(ells) < 2:
            continue
        singles = {
            r.config.ells[0]: r for r in records
            if r.config.method == rec.config.method and len(r.config.ells) == 1
        }
        if not all(l in singles for l in ells):
            continue
        seq = sum(singles[l].matvecs for l in ells)
        verdict = "<=" if rec.matvecs <= seq else ">"
        lines.append(
            f"{rec.config.method}: Mv(simultaneous {ells}) = {rec.matvecs} {verdict} "
            f"sum Mv(sequential) = {seq}, saved {seq - rec.matvecs}"
        )
    return lines


def compare(configs: List[RunConfig], workers: int = 1, store=None) -> ComparisonTable:
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    base = configs[0]
    for cfg in configs[1:]:
        if not _same_problem(base, cfg):
            raise ConfigError(f"configs disagree on the problem: {base.problem} vs {cfg.problem}")
        if cfg.t != base.t:
            raise ConfigError(f"configs disagree on t: {base.t} vs {cfg.t}")

    logger.info("Compare: %d configs, workers=%d", len(configs), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda c: solve(c).record, configs))
    else:
        records = [solve(c).record for c in configs]

    if store is not None:
        for rec in records:
            store.save(rec)
    return ComparisonTable(problem_hash=records[0].problem_hash, rows=records, savings=savings_lines(records))


def csv_rows(records: Iterable[RunRecord]):
    for rec in records:
        for res in rec.results:
            yield {
                "method": rec.config.method,
                "problem": rec.config.problem,
                "n": rec.n,
                "t": rec.config.t,
                "ell": res.ell,
                "residual": repr(res.residual),
                "error": "" if res.error is None else repr(res.error),
                "cycles": rec.cycles,
                "mv": rec.matvecs,
                "wall_ms": f"{rec.wall_ms:.3f}",
                "bound_closed": "" if res.bound_closed is None else repr(res.bound_closed),
                "bound_integral": "" if res.bound_integral is None else repr(res.bound_integral),
                "solution_norm": "" if res.solution_norm is None else repr(res.solution_norm),
                "schema_version": SCHEMA_VERSION,
            }


def write_csv(records: Iterable[RunRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(csv_rows(records))


def write_json(payload, path) -> None:
    Path(path).write_text(payload.model_dump_json(indent=2))


def write_solutions(solutions: Dict[int, np.ndarray], path, cfg: RunConfig) -> None:
    """npz: phi_<l> для каждого l, плюс t и признак масштабирования t^l."""
    arrays = {f"phi_{l}": np.asarray(y) for l, y in sorted(solutions.items())}
    np.savez(path, t=np.float64(cfg.t), scaled=np.bool_(cfg.scaled), **arrays)
    logger.info("Solutions written to %s (%s)", path, ", ".join(arrays))


def write_report(records: List[RunRecord], path, table: ComparisonTable | None = None) -> None:
    """Формат по расширению: .csv или .json."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_csv(records, path)
    elif table is not None:
        write_json(table, path)
    elif len(records) == 1:
        write_json(records[0], path)
    else:
        raise ConfigError("several records go to CSV or a comparison table")
    logger.info("Report written to %s", path)
