from fastapi import APIRouter, HTTPException
from api.schemas.run import CompareRequest, ComparisonTable, RunConfig, RunRecord
from phisolver.errors import ConfigError, InputError
from phisolver.experiment import compare, run
from phisolver.store import RunStore
import logging

router = APIRouter(prefix="/api", tags=["api"])
logger = logging.getLogger(__name__)


def get_store() -> RunStore | None:
    return RunStore.from_env()


@router.post("/run", response_model=RunRecord)
def run_solver(payload: RunConfig):
    logger.info(
        "API run requested: %s on %s (t=%g, ells=%s)",
        payload.method,
        payload.problem,
        payload.t,
        payload.ells,
    )

    try:
        # на сервере отчёт и решения в файлы не пишем
        return run(payload.model_copy(update={"output": None, "solutions": None}), get_store())

    except (ConfigError, InputError) as e:
        logger.warning("API run rejected: %s", e)
        raise HTTPException(status_code=400, detail=str(e))

    except Exception:
        logger.exception("API run failed")
        raise HTTPException(
            status_code=500,
            detail="Run failed. Check logs.",
        )


@router.post("/compare", response_model=ComparisonTable)
def compare_methods(payload: CompareRequest):
    logger.info(
        "API compare requested: %s",
        [(c.method, c.ells) for c in payload.configs],
    )

    try:
        configs = [c.model_copy(update={"output": None, "solutions": None}) for c in payload.configs]
        return compare(configs, workers=payload.workers, store=get_store())

    except (ConfigError, InputError) as e:
        logger.warning("API compare rejected: %s", e)
        raise HTTPException(status_code=400, detail=str(e))

    except Exception:
        logger.exception("API compare failed")
        raise HTTPException(
            status_code=500,
            detail="Compare failed. Check logs.",
        )


@router.get("/runs")
def list_runs(limit: int = 50):
    store = get_store()
    if store is None:
        raise HTTPException(status_code=404, detail="Run store is not configured (PHISOLVER_DB).")
    return store.list(limit)
