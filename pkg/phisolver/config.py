import re
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = "phisolver.run/1"

Method = Literal["arnoldi", "harmonic", "si", "tra", "trha"]
Oracle = Literal["none", "dense", "taylor"]

_GAMMA_REL = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\*?\s*t\s*$")


def parse_ells(value) -> List[int]:
    """'1,2,3' или [1, 2, 3] -> отсортированный список без повторов."""
    if isinstance(value, str):
        parts = value.split(",")
        if any(not p.strip() for p in parts):
            raise ValueError(f"ells: empty item in '{value}'")
        try:
            items = [int(p) for p in parts]
        except ValueError:
            raise ValueError(f"ells: '{value}' is not a comma-separated list of integers") from None
    elif isinstance(value, int):
        items = [value]
    else:
        items = [int(v) for v in value]
    if not items or min(items) < 0:
        raise ValueError("ells: expected non-negative integers")
    return sorted(set(items))


def resolve_gamma(gamma: str | float, t: float) -> float:
    """Абсолютное значение или '<c>t' (c*t)."""
    if isinstance(gamma, (int, float)):
        value = float(gamma)
    else:
        m = _GAMMA_REL.match(gamma)
        if m:
            value = float(m.group(1)) * t
        else:
            try:
                value = float(gamma)
            except ValueError:
                raise ValueError(f"gamma: cannot parse '{gamma}'") from None
    if not value > 0:
        raise ValueError("gamma must be positive")
    return value


class RunConfig(BaseModel):
    problem: str = "laplacian2d"
    N: Optional[int] = Field(default=None, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    scale: float = 1.0
    t: float = Field(default=1.0, gt=0)
    ells: List[int] = Field(default_factory=lambda: [0])
    method: Method = "trha"
    k: int = Field(default=30, ge=1)
    q: int = Field(default=5, ge=0)
    tol: float = Field(default=1e-8, gt=0)
    gamma: str | float = "0.01t"
    max_cycles: int = Field(default=60, ge=1)
    seed: int = 0
    vector: Literal["default", "ones", "random"] = "default"
    scaled: bool = False
    oracle: Oracle = "none"
    bounds: bool = False
    sector_a: Optional[float] = Field(default=None, ge=0)
    sector_theta: float = Field(default=0.0, ge=0)
    output: Optional[str] = None
    solutions: Optional[str] = None

    @field_validator("ells", mode="before")
    @classmethod
    def _ells(cls, v):
        return parse_ells(v)

    @field_validator("problem")
    @classmethod
    def _problem(cls, v: str):
        if v in ("laplacian2d", "advdiff2d", "lesp") or (v.startswith("mtx:") and len(v) > 4):
            return v
        raise ValueError(f"unknown problem '{v}' (laplacian2d, advdiff2d, lesp, mtx:path)")

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        resolve_gamma(v, 1.0)
        return v

    @model_validator(mode="after")
    def _restart_dims(self):
        if self.method in ("tra", "trha") and self.q + 1 >= self.k:
            raise ValueError(f"restart needs q+1 < k (q={self.q}, k={self.k})")
        return self

    @property
    def gamma_value(self) -> float:
        return resolve_gamma(self.gamma, self.t)


class EllResult(BaseModel):
    ell: int
    residual: float
    error: Optional[float] = None
    converged: bool
    bound_closed: Optional[float] = None
    bound_integral: Optional[float] = None
    bound_valid: Optional[bool] = None
    solution_norm: Optional[float] = None
    ode_error: Optional[float] = None


class RunRecord(BaseModel):
    schema_version: str = SCHEMA_VERSION
    config: RunConfig
    problem_hash: str
    n: int
    gamma: float
    results: List[EllResult]
    cycles: int
    matvecs: int
    solves: int = 0
    wall_ms: float
    converged: bool
    q_history: List[int] = Field(default_factory=list)
    residual_history: List[Dict[int, float]] = Field(default_factory=list)
    message: Optional[str] = None


class CompareRequest(BaseModel):
    configs: List[RunConfig] = Field(min_length=2)
    workers: int = Field(default=1, ge=1)


class ComparisonTable(BaseModel):
    schema_version: str = SCHEMA_VERSION
    problem_hash: str
    rows: List[RunRecord]
    savings: List[str] = Field(default_factory=list)
