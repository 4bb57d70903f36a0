import json
import logging
import os
from datetime import datetime, timezone
from typing import List

from sqlalchemy import Boolean, Column, DateTime, Float, Integer, MetaData, String, Table, Text, create_engine, select
from sqlalchemy.engine import Engine

from phisolver.config import RunRecord

logger = logging.getLogger(__name__)

metadata = MetaData()

run_records = Table(
    "run_records",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("created_at", DateTime(timezone=True), nullable=False),
    Column("problem_hash", String(32), index=True),
    Column("method", String(16), nullable=False),
    Column("problem", String(255), nullable=False),
    Column("n", Integer, nullable=False),
    Column("t", Float, nullable=False),
    Column("ells", String(64), nullable=False),
    Column("cycles", Integer, nullable=False),
    Column("matvecs", Integer, nullable=False),
    Column("wall_ms", Float, nullable=False),
    Column("converged", Boolean, nullable=False),
    Column("payload", Text, nullable=False),
)


class RunStore:
    """Хранилище RunRecord; любой URL SQLAlchemy (по умолчанию sqlite-файл)."""

    def __init__(self, url: str):
        self.engine: Engine = create_engine(url, future=True)
        metadata.create_all(self.engine)
        logger.info("Run store ready: %s", self.engine.url.render_as_string(hide_password=True))

    @classmethod
    def from_env(cls) -> "RunStore | None":
        url = os.environ.get("PHISOLVER_DB")
        return cls(url) if url else None

    def save(self, record: RunRecord) -> int:
        cfg = record.config
        with self.engine.begin() as conn:
            result = conn.execute(
                run_records.insert().values(
                    created_at=datetime.now(timezone.utc),
                    problem_hash=record.problem_hash,
                    method=cfg.method,
                    problem=cfg.problem,
                    n=record.n,
                    t=cfg.t,
                    ells=",".join(str(l) for l in cfg.ells),
                    cycles=record.cycles,
                    matvecs=record.matvecs,
                    wall_ms=record.wall_ms,
                    converged=record.converged,
                    payload=record.model_dump_json(),
                )
            )
            run_id = result.inserted_primary_key[0]
        logger.info("Run record %s stored (%s, %s)", run_id, cfg.method, cfg.problem)
        return run_id

    def list(self, limit: int = 50) -> List[dict]:
        stmt = (
            select(run_records.c.id, run_records.c.created_at, run_records.c.method, run_records.c.problem,
                   run_records.c.n, run_records.c.t, run_records.c.ells, run_records.c.cycles,
                   run_records.c.matvecs, run_records.c.converged)
            .order_by(run_records.c.id.desc())
            .limit(limit)
        )
        with self.engine.connect() as conn:
            return [dict(row._mapping) for row in conn.execute(stmt)]

    def get(self, run_id: int) -> RunRecord | None:
        with self.engine.connect() as conn:
            row = conn.execute(select(run_records.c.payload).where(run_records.c.id == run_id)).first()
        if row is None:
            return None
        return RunRecord.model_validate(json.loads(row.payload))
