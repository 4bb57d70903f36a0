import numpy as np
import pytest
import scipy.sparse as sp
from fastapi.testclient import TestClient

from api.main import app
from phisolver.sparsemat import CsrOperator


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs (tens of seconds)")


@pytest.fixture(scope="session")
def client():
    return TestClient(app)


@pytest.fixture(autouse=True)
def no_run_store(monkeypatch):
    # тесты API не должны писать в БД из окружения
    monkeypatch.delenv("PHISOLVER_DB", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_operator(rng, n: int, density: float = 0.1, shift: float = 1.0, scale: float = 0.1) -> CsrOperator:
    """Разреженная A = diag(shift + [0, 1)) + scale*R: спектр в правой полуплоскости."""
    R = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    A = sp.diags(shift + rng.random(n)) + scale * R
    return CsrOperator.from_sparse(A, name=f"random(n={n})")


def diagonal_operator(values) -> CsrOperator:
    return CsrOperator.from_sparse(sp.diags(np.asarray(values, dtype=float)), name="diag")


@pytest.fixture
def small_op(rng):
    return random_operator(rng, 40)


@pytest.fixture
def dense_op(rng):
    """Диагонализуемая плотная 60x60 с вещественным спектром в [1, 3]."""
    n = 60
    S = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    lam = np.linspace(1.0, 3.0, n)
    A = S @ np.diag(lam) @ np.linalg.inv(S)
    return CsrOperator.from_sparse(A, name="dense60"), S, lam
