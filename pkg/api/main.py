import logging
import os
from contextlib import asynccontextmanager

from fastapi import FastAPI

from api.routers import web, api_run
from phisolver.config import SCHEMA_VERSION
from phisolver.logging_config import setup_logging

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging()
    store = "PHISOLVER_DB" if os.environ.get("PHISOLVER_DB") else "disabled"
    logger.info("Phi Solver API started (schema %s, run store: %s)", SCHEMA_VERSION, store)
    yield
    logger.info("Phi Solver API stopped")


app = FastAPI(title="Phi Solver", version=SCHEMA_VERSION.rsplit("/", 1)[-1], lifespan=lifespan)


# Для докера
@app.get("/health")
def health():
    return {"status": "ok", "schema_version": SCHEMA_VERSION}


app.include_router(web.router)
app.include_router(api_run.router)
