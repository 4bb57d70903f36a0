import pytest

from phisolver.config import EllResult, RunConfig, RunRecord
from phisolver.store import RunStore


def _record(method="trha", matvecs=42):
    cfg = RunConfig(problem="lesp", n=50, t=0.5, ells=[0, 2], method=method)
    return RunRecord(
        config=cfg, problem_hash="0123456789abcdef", n=50, gamma=0.005,
        results=[EllResult(ell=0, residual=1e-9, converged=True), EllResult(ell=2, residual=3e-9, converged=True)],
        cycles=3, matvecs=matvecs, wall_ms=12.5, converged=True, q_history=[0, 5, 5],
        residual_history=[{0: 1e-3, 2: 2e-3}, {0: 1e-6, 2: 3e-6}, {0: 1e-9, 2: 3e-9}],
    )


@pytest.fixture
def store(tmp_path):
    return RunStore(f"sqlite:///{tmp_path / 'runs.db'}")


def test_save_and_get(store):
    rec = _record()
    run_id = store.save(rec)
    loaded = store.get(run_id)
    assert loaded == rec
    assert loaded.residual_history[2][2] == 3e-9


def test_list_newest_first(store):
    store.save(_record("tra", 60))
    store.save(_record("trha", 45))
    rows = store.list()
    assert [r["method"] for r in rows] == ["trha", "tra"]
    assert rows[0]["ells"] == "0,2"
    assert rows[1]["matvecs"] == 60
    assert len(store.list(limit=1)) == 1


def test_get_missing(store):
    assert store.get(999) is None


def test_from_env(monkeypatch, tmp_path):
    assert RunStore.from_env() is None
    monkeypatch.setenv("PHISOLVER_DB", f"sqlite:///{tmp_path / 'env.db'}")
    assert isinstance(RunStore.from_env(), RunStore)
