"""
Командная строка:

    python -m phisolver run --problem laplacian2d --N 50 --scale 0.025 --t 1 --ells 1,2,3,4 --method trha
    python -m phisolver compare --method tra,trha --problem lesp --n 200 --t 1 --ells 0,1
"""
import argparse
import logging
import sys
from typing import List

from pydantic import ValidationError

from phisolver.config import RunConfig
from phisolver.errors import ConfigError, InputError, MaxCyclesExceeded, NumericalError
from phisolver.experiment import compare, run, write_report
from phisolver.logging_config import setup_logging
from phisolver.store import RunStore

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_SOLVER = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", default="laplacian2d", help="laplacian2d | advdiff2d | lesp | mtx:path")
    p.add_argument("--N", type=int, help="grid size per direction (n = N^2)")
    p.add_argument("--n", type=int, help="matrix size for lesp")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--ells", default="0", help="comma-separated list, e.g. 0,1,2,3")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--gamma", default="0.01t", help="absolute value or '<c>t'")
    p.add_argument("--max-cycles", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vector", choices=["default", "ones", "random"], default="default")
    p.add_argument("--scaled", action="store_true", help="report t^l * phi_l(-tA)v")
    p.add_argument("--oracle", choices=["none", "dense", "taylor"], default="none")
    p.add_argument("--bounds", action="store_true", help="a-posteriori bounds (arnoldi, harmonic)")
    p.add_argument("--sector-a", type=float)
    p.add_argument("--sector-theta", type=float, default=0.0)
    p.add_argument("--output", "-o", help="report file (.csv or .json)")
    p.add_argument("--db", help="SQLAlchemy URL of the run store (default: $PHISOLVER_DB)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phisolver", description="phi_l(-tA)v via (thick-restarted) Krylov methods")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--log", help="log file (default: $PHISOLVER_LOG or phisolver.log)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="single run")
    _add_problem_args(p_run)
    p_run.add_argument("--method", default="trha", help="arnoldi | harmonic | si | tra | trha")
    p_run.add_argument("--solutions", help="write phi_l(-tA)v (t^l-scaled with --scaled) to an .npz file")

    p_cmp = sub.add_parser("compare", help="several methods or ell sets on one problem")
    _add_problem_args(p_cmp)
    p_cmp.add_argument("--method", default="tra,trha", help="comma-separated methods")
    p_cmp.add_argument("--sequential", action="store_true",
                       help="also run every ell separately to report matvec savings")
    p_cmp.add_argument("--workers", type=int, default=1)
    return parser


def _config(args, method: str, ells=None) -> RunConfig:
    fields = dict(
        problem=args.problem, N=args.N, n=args.n, scale=args.scale, t=args.t,
        ells=args.ells if ells is None else ells, method=method, k=args.k, q=args.q, tol=args.tol,
        gamma=args.gamma, max_cycles=args.max_cycles, seed=args.seed, vector=args.vector,
        scaled=args.scaled, oracle=args.oracle, bounds=args.bounds,
        sector_a=args.sector_a, sector_theta=args.sector_theta,
    )
    return RunConfig(**fields)


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        parts.append(f"--{loc.replace('_', '-')}: {err['msg']}")
    return "; ".join(parts)


def _print_record(record) -> None:
    cfg = record.config
    print(f"{cfg.method} {cfg.problem} n={record.n} t={cfg.t:g} cycles={record.cycles} "
          f"mv={record.matvecs} wall_ms={record.wall_ms:.1f} converged={record.converged}")
    for res in record.results:
        line = f"  ell={res.ell} residual={res.residual:.3e}"
        if res.solution_norm is not None:
            line += f" norm={res.solution_norm:.6e}"
        if res.error is not None:
            line += f" error={res.error:.3e}"
        if res.bound_closed is not None:
            line += f" bound_closed={res.bound_closed:.3e}"
        if res.bound_integral is not None:
            line += f" bound_integral={res.bound_integral:.3e}"
        print(line)


def _cmd_run(args, store) -> int:
    cfg = _config(args, args.method)
    if args.output or args.solutions:
        cfg = cfg.model_copy(update={"output": args.output, "solutions": args.solutions})
    record = run(cfg, store)
    _print_record(record)
    if record.message:
        print(record.message, file=sys.stderr)
        return EXIT_SOLVER
    return 0


def _cmd_compare(args, store) -> int:
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    configs: List[RunConfig] = [_config(args, m) for m in methods]
    if args.sequential:
        for m in methods:
            configs.extend(_config(args, m, [l]) for l in configs[0].ells)
    if len(configs) < 2:
        raise ConfigError("compare needs at least two methods or --sequential")

    table = compare(configs, workers=args.workers, store=store)
    print(f"problem hash {table.problem_hash}")
    for rec in table.rows:
        _print_record(rec)
    for line in table.savings:
        print(line)
    if args.output:
        write_report(table.rows, args.output, table)
    return EXIT_SOLVER if any(rec.message for rec in table.rows) else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log, verbose=args.verbose)

    try:
        store = RunStore(args.db) if args.db else RunStore.from_env()
        if args.command == "run":
            return _cmd_run(args, store)
        return _cmd_compare(args, store)
    except ValidationError as e:
        print(f"phisolver: error: {_validation_message(e)}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, InputError) as e:
        print(f"phisolver: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, MaxCyclesExceeded) as e:
        logger.exception("Solver failed")
        print(f"phisolver: solver failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"phisolver: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
