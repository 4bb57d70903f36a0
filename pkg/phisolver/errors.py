"""Исключения phisolver."""


class PhiSolverError(Exception):
    pass


class ConfigError(PhiSolverError):
    pass


class InputError(PhiSolverError):
    pass


class DimensionMismatch(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedField(InputError):
    pass


class NumericalError(PhiSolverError):
    pass


class SingularMatrix(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class Overflow(NumericalError):
    pass


class SingularShift(NumericalError):
    pass


class SingularProjected(NumericalError):
    pass


class SolveFailure(NumericalError):
    pass


class StiffFailure(NumericalError):
    pass


class SingularStart(NumericalError):
    pass


class BasisMismatch(NumericalError):
    pass


class AssumptionViolated(NumericalError):
    pass


class DivergentIntegral(NumericalError):
    pass


class MaxCyclesExceeded(PhiSolverError):
    """Лимит рестартов исчерпан; несёт лучший достигнутый результат."""

    def __init__(self, report, solutions):
        self.report = report
        self.solutions = solutions
        super().__init__(
            f"{report.method}: not converged after {report.cycles} cycles "
            f"(max residual {report.max_residual():.3e})"
        )


class RankDeficient(UserWarning):
    pass
