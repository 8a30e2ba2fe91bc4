"""HTTP/JSON facade over :class:`~tmem.engine.Engine`.

The service adds transport only: every response body is the JSON dump of
the same pydantic model the library returns.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import asynccontextmanager
from typing import Any, Optional

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from tmem import errors
from tmem.config import Settings
from tmem.curation import ConsolidationReport
from tmem.engine import (
    ConsolidateRequest,
    Engine,
    ExtractMode,
    IngestResponse,
    RetrieveRequest,
    RetrieveResponse,
    StatsResponse,
    TipList,
)
from tmem.models import Granularity, Priority, Tip, TipCategory
from tmem.service.jobs import JobManager, JobStatus

access_log = logging.getLogger("tmem.service.access")

# most specific first
_STATUS: list[tuple[type[Exception], int]] = [
    (errors.DuplicateId, 409),
    (errors.Busy, 409),
    (errors.UnknownId, 404),
    (errors.ValidationError, 400),
    (errors.StoreIoError, 500),
    (errors.StoreError, 400),
    (errors.GatewayError, 502),
    (errors.ConsolidationError, 500),
]


def status_for(exc: Exception) -> int:
    return next((code for kind, code in _STATUS if isinstance(exc, kind)), 500)


def create_app(engine: Engine | None = None, settings: Settings | None = None) -> FastAPI:
    """Build the app around ``engine``, or open one from ``settings``."""
    owns_engine = engine is None
    if engine is None:
        engine = Engine.from_settings(settings or Settings.load())
    workers = settings.workers if settings is not None else 2
    jobs = JobManager(engine, workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        jobs.shutdown()
        if owns_engine:
            engine.close()

    app = FastAPI(title="tmem", version="1", lifespan=lifespan)
    app.state.engine = engine
    app.state.jobs = jobs

    @app.exception_handler(errors.TmemError)
    async def _engine_error(request: Request, exc: errors.TmemError) -> JSONResponse:
        return JSONResponse(status_code=status_for(exc), content={"error": type(exc).__name__, "detail": str(exc)})

    @app.middleware("http")
    async def _access_log(request: Request, call_next: Any) -> Any:
        started = time.perf_counter()
        response = await call_next(request)
        access_log.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "ms": round((time.perf_counter() - started) * 1000, 2),
                },
                sort_keys=True,
            )
        )
        return response

    @app.post("/v1/trajectories", status_code=201, response_model=IngestResponse)
    def post_trajectory(
        body: dict[str, Any] = Body(...),
        extract: Optional[ExtractMode] = Query(None),
    ) -> IngestResponse:
        ingested = engine.ingest(body)
        if extract is not None:
            job = jobs.submit(ingested.id, extract)
            ingested = ingested.model_copy(update={"job_id": job.id})
        return ingested

    @app.get("/v1/jobs/{job_id}", response_model=JobStatus)
    def get_job(job_id: str) -> JobStatus:
        return jobs.get(job_id)

    @app.post("/v1/retrieve", response_model=RetrieveResponse)
    def post_retrieve(request: RetrieveRequest) -> RetrieveResponse:
        return engine.retrieve(request)

    @app.post("/v1/consolidate", response_model=ConsolidationReport)
    def post_consolidate(request: Optional[ConsolidateRequest] = None) -> ConsolidationReport:
        return engine.consolidate(request.threshold if request is not None else None)

    @app.get("/v1/tips", response_model=TipList)
    def get_tips(
        category: Optional[TipCategory] = None,
        priority: Optional[Priority] = None,
        application_context: Optional[str] = None,
        task_category: Optional[str] = None,
        granularity: Optional[Granularity] = None,
        generic_only: bool = False,
    ) -> TipList:
        return engine.tips(
            category=category,
            priority=priority,
            application_context=application_context,
            task_category=task_category,
            granularity=granularity,
            generic_only=generic_only,
        )

    @app.get("/v1/tips/{tip_id}", response_model=Tip)
    def get_tip(tip_id: str) -> Tip:
        return engine.tip(tip_id)

    @app.get("/v1/stats", response_model=StatsResponse)
    def get_stats() -> StatsResponse:
        return engine.stats()

    @app.get("/v1/export", response_class=PlainTextResponse)
    def get_export() -> PlainTextResponse:
        body = "".join(line + "\n" for line in engine.export_jsonl())
        return PlainTextResponse(body, media_type="application/x-ndjson")

    return app
